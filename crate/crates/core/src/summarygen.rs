//! Alignment-conditioned summary generation against chat-completion
//! endpoints, with a resumable on-disk cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Alignment, Corpus, SummaryRecord, Workspace};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;

pub const PLACEHOLDER: &str = "{article}";
pub const CACHE_FILE: &str = "generation_cache.jsonl";
pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    pub alignment: Alignment,
    pub template: String,
    pub prompt_hash: String,
}

impl PromptTemplate {
    pub fn new(alignment: Alignment, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let n = template.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::Config(format!(
                "{alignment} template must contain exactly one {PLACEHOLDER} placeholder, found {n}"
            )));
        }
        Ok(PromptTemplate {
            alignment,
            prompt_hash: sha256_hex(template.as_bytes()),
            template,
        })
    }

    pub fn render(&self, article: &str) -> String {
        self.template.replacen(PLACEHOLDER, article, 1)
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    neutral: String,
    democrat: String,
    republican: String,
}

/// One template per alignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    pub neutral: PromptTemplate,
    pub democrat: PromptTemplate,
    pub republican: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let build = |a, t: &str| PromptTemplate::new(a, t).expect("default templates are valid");
        TemplateSet {
            neutral: build(
                Alignment::Neutral,
                "Summarize the following news article: {article}",
            ),
            democrat: build(
                Alignment::Democrat,
                "Summarize the following news article from a perspective aligned with the Democratic Party's viewpoints: {article}",
            ),
            republican: build(
                Alignment::Republican,
                "Summarize the following news article from a perspective aligned with the Republican Party's viewpoints: {article}",
            ),
        }
    }
}

impl TemplateSet {
    pub fn from_json(raw: &str) -> Result<Self> {
        let file: TemplateFile =
            serde_json::from_str(raw).map_err(|e| Error::Config(format!("template file: {e}")))?;
        Ok(TemplateSet {
            neutral: PromptTemplate::new(Alignment::Neutral, file.neutral)?,
            democrat: PromptTemplate::new(Alignment::Democrat, file.democrat)?,
            republican: PromptTemplate::new(Alignment::Republican, file.republican)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    pub fn get(&self, alignment: Alignment) -> &PromptTemplate {
        match alignment {
            Alignment::Neutral => &self.neutral,
            Alignment::Democrat => &self.democrat,
            Alignment::Republican => &self.republican,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on each later attempt.
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            request_timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Extracts the first choice's message content from a response body.
pub fn parse_response(body: &str) -> std::result::Result<String, BackendError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("bad response: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendError {
    Transport(String),
    Status { code: u16, body: String },
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::Protocol(_) => false,
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "transport: {m}"),
            BackendError::Status { code, body } => write!(f, "http {code}: {body}"),
            BackendError::Protocol(m) => write!(f, "protocol: {m}"),
        }
    }
}

pub trait ChatBackend: Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendError>;
}

/// Blocking HTTP backend speaking the common chat-completions JSON shape.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    /// Reads the bearer credential, if any, from the environment variable
    /// named `api_key_env`.
    pub fn new(endpoint: impl Into<String>, timeout: Duration, api_key_env: Option<&str>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.into(),
            api_key: api_key_env.and_then(|name| std::env::var(name).ok()),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(BackendError::Status { code, body });
        }
        parse_response(&body)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Done,
    Skipped,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenerationJob {
    pub article_id: String,
    pub model_id: String,
    pub alignment: Alignment,
    pub prompt_hash: String,
    pub status: JobStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
struct CacheKey {
    article_id: String,
    model_id: String,
    alignment: Alignment,
    prompt_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CacheEntry {
    #[serde(flatten)]
    key: CacheKey,
    text: String,
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub model_id: String,
    pub decoding: Decoding,
    pub retry: RetryPolicy,
    pub concurrency: usize,
}

impl GenerateOptions {
    pub fn new(model_id: impl Into<String>) -> Self {
        GenerateOptions {
            model_id: model_id.into(),
            decoding: Decoding::default(),
            retry: RetryPolicy::default(),
            concurrency: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GenerateCounts {
    pub done: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenerateOutcome {
    pub counts: GenerateCounts,
    /// Ordered by (article_id, alignment).
    pub jobs: Vec<GenerationJob>,
}

fn load_cache(path: &Path) -> Result<HashMap<CacheKey, String>> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheEntry>(&line) {
            Ok(entry) => {
                out.insert(entry.key, entry.text);
            }
            // A torn final line from an interrupted run is dropped.
            Err(e) => log::warn!("{}:{}: ignoring unreadable cache line: {e}", path.display(), idx + 1),
        }
    }
    Ok(out)
}

fn call_with_retry(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    retry: &RetryPolicy,
) -> std::result::Result<String, String> {
    let attempts = retry.max_attempts.max(1);
    let mut delay = retry.initial_backoff;
    for attempt in 1..=attempts {
        match backend.complete(request) {
            Ok(text) if text.trim().is_empty() => return Err("empty output".into()),
            Ok(text) => return Ok(text),
            Err(e) if e.is_retryable() && attempt < attempts => {
                log::debug!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => return Err(format!("{e} after {attempt} attempt(s)")),
        }
    }
    unreachable!("loop returns on the last attempt")
}

/// Produces the three alignment-conditioned summaries of every article in
/// the workspace for one model.
///
/// A job is keyed by (article, model, alignment, prompt hash). Keys already
/// in the cache are skipped, restoring the stored summary if needed, so a
/// rerun issues no requests and a changed template regenerates only its own
/// alignment. Results are appended to the cache as they arrive and upserted
/// into the summary store at the end.
pub fn generate(
    workspace: &Workspace,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> Result<GenerateOutcome> {
    if options.model_id.is_empty() {
        return Err(Error::Config("model_id must be non-empty".into()));
    }
    let corpus = workspace.load()?;
    let cache_path = workspace.path(CACHE_FILE);
    let cache = load_cache(&cache_path)?;

    let mut jobs = Vec::new();
    let mut restored = Vec::new();
    let mut pending = Vec::new();
    for article in corpus.articles() {
        for alignment in Alignment::ALL {
            let template = templates.get(alignment);
            let key = CacheKey {
                article_id: article.article_id.clone(),
                model_id: options.model_id.clone(),
                alignment,
                prompt_hash: template.prompt_hash.clone(),
            };
            let status = match cache.get(&key) {
                Some(text) => {
                    if !stored_matches(&corpus, &key, text) {
                        restored.push(SummaryRecord::new(
                            key.article_id.clone(),
                            key.model_id.clone(),
                            alignment,
                            text.clone(),
                        ));
                    }
                    JobStatus::Skipped
                }
                None => {
                    pending.push((jobs.len(), key.clone(), template.render(&article.text)));
                    JobStatus::Pending
                }
            };
            jobs.push(GenerationJob {
                article_id: key.article_id,
                model_id: key.model_id,
                alignment,
                prompt_hash: key.prompt_hash,
                status,
            });
        }
    }

    let mut cache_out = if pending.is_empty() {
        None
    } else {
        Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&cache_path)
                .map_err(|e| Error::io(&cache_path, e))?,
        )
    };

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, CacheKey, std::result::Result<String, String>)>();
    let workers = options.concurrency.clamp(1, pending.len().max(1));
    let mut fresh = Vec::new();
    let mut write_error = None;
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((job, key, prompt)) = pending.get(i) else { break };
                let request = ChatRequest {
                    model: options.model_id.clone(),
                    messages: vec![ChatMessage {
                        role: "user".into(),
                        content: prompt.clone(),
                    }],
                    temperature: options.decoding.temperature,
                    max_tokens: options.decoding.max_tokens,
                };
                let result = call_with_retry(backend, &request, &options.retry);
                if tx.send((*job, key.clone(), result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: results are persisted here in arrival order.
        for (job, key, result) in rx {
            match result {
                Ok(text) => {
                    if let Some(out) = cache_out.as_mut() {
                        let entry = CacheEntry { key: key.clone(), text: text.clone() };
                        let written = serde_json::to_string(&entry)
                            .map_err(Error::from)
                            .and_then(|line| {
                                writeln!(out, "{line}").map_err(|e| Error::io(&cache_path, e))
                            });
                        if let Err(e) = written {
                            write_error.get_or_insert(e);
                        }
                    }
                    fresh.push(SummaryRecord::new(key.article_id, key.model_id, key.alignment, text));
                    jobs[job].status = JobStatus::Done;
                }
                Err(reason) => {
                    log::warn!(
                        "generation failed for ({}, {}, {}): {reason}",
                        key.article_id,
                        key.model_id,
                        key.alignment
                    );
                    jobs[job].status = JobStatus::Failed(reason);
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    restored.extend(fresh);
    if !restored.is_empty() {
        workspace.upsert_summaries(restored)?;
    }

    let mut counts = GenerateCounts::default();
    for job in &jobs {
        match job.status {
            JobStatus::Done => counts.done += 1,
            JobStatus::Skipped => counts.skipped += 1,
            JobStatus::Failed(_) => counts.failed += 1,
            JobStatus::Pending => unreachable!("every pending job reports back"),
        }
    }
    Ok(GenerateOutcome { counts, jobs })
}

fn stored_matches(corpus: &Corpus, key: &CacheKey, text: &str) -> bool {
    let stored = corpus.summary(&crate::corpus::SummaryKey {
        article_id: key.article_id.clone(),
        model_id: key.model_id.clone(),
        alignment: key.alignment,
    });
    stored.is_some_and(|s| s.text == text)
}

/// Table-2-shaped row: mean words per summary by alignment, plus the
/// record-weighted mean over all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub model_id: String,
    pub democrat: Option<f64>,
    pub republican: Option<f64>,
    pub neutral: Option<f64>,
    pub aggregate: Option<f64>,
}

pub fn summary_length_report(corpus: &Corpus) -> Vec<LengthRow> {
    let mut sums: BTreeMap<String, [(usize, usize); 3]> = BTreeMap::new();
    for r in corpus.summaries() {
        let slot = &mut sums.entry(r.model_id.clone()).or_default()[r.alignment as usize];
        slot.0 += 1;
        slot.1 += r.word_count();
    }
    sums.into_iter()
        .map(|(model_id, cells)| {
            let mean = |(n, w): (usize, usize)| (n > 0).then(|| w as f64 / n as f64);
            let (n, w) = cells
                .iter()
                .fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
            LengthRow {
                model_id,
                neutral: mean(cells[Alignment::Neutral as usize]),
                democrat: mean(cells[Alignment::Democrat as usize]),
                republican: mean(cells[Alignment::Republican as usize]),
                aggregate: mean((n, w)),
            }
        })
        .collect()
}
