//! Articles, their three-way summaries, and the line-delimited JSON workspace
//! that persists them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const ARTICLES_FILE: &str = "articles.jsonl";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const TOPICS_FILE: &str = "topics.json";
const LOCK_FILE: &str = ".lock";

/// Conditioning instruction a summary was generated under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Neutral,
    Democrat,
    Republican,
}

impl Alignment {
    pub const ALL: [Alignment; 3] = [Alignment::Neutral, Alignment::Democrat, Alignment::Republican];

    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::Neutral => "neutral",
            Alignment::Democrat => "democrat",
            Alignment::Republican => "republican",
        }
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral" => Ok(Alignment::Neutral),
            "democrat" => Ok(Alignment::Democrat),
            "republican" => Ok(Alignment::Republican),
            other => Err(Error::UnknownFilter {
                what: "alignment",
                value: other.to_string(),
            }),
        }
    }
}

/// A declared topic identifier such as `abortion`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Topic(String);

impl Topic {
    pub fn new(id: impl Into<String>) -> Self {
        Topic(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicDef {
    pub id: Topic,
    pub label: String,
}

/// The topics a workspace accepts, in display order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSet {
    pub topics: Vec<TopicDef>,
}

impl Default for TopicSet {
    fn default() -> Self {
        let defs = [
            ("abortion", "Abortion"),
            ("gun_control", "Gun Control/Rights"),
            ("healthcare", "Healthcare"),
            ("immigration", "Immigration"),
            ("lgbtq", "LGBTQ+"),
        ];
        TopicSet {
            topics: defs
                .iter()
                .map(|(id, label)| TopicDef {
                    id: Topic::new(*id),
                    label: label.to_string(),
                })
                .collect(),
        }
    }
}

impl TopicSet {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TopicSet {
            topics: ids
                .into_iter()
                .map(|id| {
                    let id = id.into();
                    TopicDef {
                        label: id.clone(),
                        id: Topic(id),
                    }
                })
                .collect(),
        }
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.topics.iter().any(|t| t.id.as_str() == topic)
    }

    pub fn get(&self, topic: &str) -> Option<&TopicDef> {
        self.topics.iter().find(|t| t.id.as_str() == topic)
    }

    pub fn label(&self, topic: &Topic) -> String {
        self.get(topic.as_str())
            .map(|t| t.label.clone())
            .unwrap_or_else(|| topic.to_string())
    }

    pub fn position(&self, topic: &Topic) -> Option<usize> {
        self.topics.iter().position(|t| &t.id == topic)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub topic: Topic,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_year: Option<i32>,
}

#[derive(Deserialize)]
struct RawSummary {
    article_id: String,
    model_id: String,
    alignment: Alignment,
    text: String,
}

impl From<RawSummary> for SummaryRecord {
    fn from(raw: RawSummary) -> Self {
        SummaryRecord::new(raw.article_id, raw.model_id, raw.alignment, raw.text)
    }
}

/// One generated summary. `word_count` is derived from `text` and is not
/// part of the wire format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawSummary")]
pub struct SummaryRecord {
    pub article_id: String,
    pub model_id: String,
    pub alignment: Alignment,
    pub text: String,
    #[serde(skip_serializing)]
    word_count: usize,
}

impl SummaryRecord {
    pub fn new(
        article_id: impl Into<String>,
        model_id: impl Into<String>,
        alignment: Alignment,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        SummaryRecord {
            article_id: article_id.into(),
            model_id: model_id.into(),
            alignment,
            word_count: text::word_count(&text),
            text,
        }
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn key(&self) -> SummaryKey {
        SummaryKey {
            article_id: self.article_id.clone(),
            model_id: self.model_id.clone(),
            alignment: self.alignment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SummaryKey {
    pub article_id: String,
    pub model_id: String,
    pub alignment: Alignment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Articles,
    Summaries,
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "articles" => Ok(RecordKind::Articles),
            "summaries" => Ok(RecordKind::Summaries),
            other => Err(Error::Invalid(format!("unknown record kind `{other}`"))),
        }
    }
}

/// Outcome of one ingestion call.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// 1-based line numbers of records rejected as duplicates.
    pub duplicate_lines: Vec<usize>,
}

/// In-memory corpus with keyed, deterministically ordered records.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    topics: TopicSet,
    articles: BTreeMap<String, Article>,
    summaries: BTreeMap<SummaryKey, SummaryRecord>,
}

impl Corpus {
    pub fn new(topics: TopicSet) -> Self {
        Corpus {
            topics,
            articles: BTreeMap::new(),
            summaries: BTreeMap::new(),
        }
    }

    pub fn topics(&self) -> &TopicSet {
        &self.topics
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.articles.values()
    }

    pub fn article(&self, id: &str) -> Option<&Article> {
        self.articles.get(id)
    }

    pub fn summaries(&self) -> impl Iterator<Item = &SummaryRecord> {
        self.summaries.values()
    }

    pub fn summary(&self, key: &SummaryKey) -> Option<&SummaryRecord> {
        self.summaries.get(key)
    }

    pub fn article_count(&self) -> usize {
        self.articles.len()
    }

    pub fn summary_count(&self) -> usize {
        self.summaries.len()
    }

    pub fn model_ids(&self) -> BTreeSet<String> {
        self.summaries.keys().map(|k| k.model_id.clone()).collect()
    }

    /// Declared topics that have at least one article, in declaration order.
    pub fn topics_present(&self) -> Vec<Topic> {
        let present: HashSet<&Topic> = self.articles.values().map(|a| &a.topic).collect();
        self.topics
            .topics
            .iter()
            .filter(|t| present.contains(&t.id))
            .map(|t| t.id.clone())
            .collect()
    }

    pub fn topic_of(&self, record: &SummaryRecord) -> Option<&Topic> {
        self.articles.get(&record.article_id).map(|a| &a.topic)
    }

    /// Adds validated articles. Duplicate ids (against the store or earlier
    /// lines) are skipped and reported by line number.
    pub fn add_articles(&mut self, lines: Vec<(usize, Article)>) -> IngestReport {
        let mut report = IngestReport::default();
        for (line, article) in lines {
            if self.articles.contains_key(&article.article_id) {
                report.duplicate_lines.push(line);
                continue;
            }
            self.articles.insert(article.article_id.clone(), article);
            report.accepted += 1;
        }
        report
    }

    pub fn add_summaries(&mut self, lines: Vec<(usize, SummaryRecord)>) -> IngestReport {
        let mut report = IngestReport::default();
        for (line, record) in lines {
            let key = record.key();
            if self.summaries.contains_key(&key) {
                report.duplicate_lines.push(line);
                continue;
            }
            self.summaries.insert(key, record);
            report.accepted += 1;
        }
        report
    }

    /// Inserts or replaces a summary; returns the replaced record if any.
    pub fn upsert_summary(&mut self, record: SummaryRecord) -> Option<SummaryRecord> {
        self.summaries.insert(record.key(), record)
    }

    pub fn write_articles<W: Write>(&self, mut out: W) -> Result<()> {
        for article in self.articles.values() {
            serde_json::to_writer(&mut out, article)?;
            out.write_all(b"\n").map_err(|e| Error::io("<articles>", e))?;
        }
        Ok(())
    }

    pub fn write_summaries<W: Write>(&self, mut out: W) -> Result<()> {
        for record in self.summaries.values() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<summaries>", e))?;
        }
        Ok(())
    }

    /// Summaries matching every provided filter, ordered by
    /// (article_id, model_id, alignment).
    pub fn select(&self, filter: &Selection) -> Result<Vec<&SummaryRecord>> {
        if let Some(topic) = &filter.topic {
            if !self.topics.contains(topic.as_str()) {
                return Err(Error::UnknownFilter {
                    what: "topic",
                    value: topic.to_string(),
                });
            }
        }
        if let Some(model) = &filter.model_id {
            if !self.summaries.keys().any(|k| &k.model_id == model) {
                return Err(Error::UnknownFilter {
                    what: "model_id",
                    value: model.clone(),
                });
            }
        }
        Ok(self
            .summaries
            .values()
            .filter(|r| filter.model_id.as_ref().is_none_or(|m| &r.model_id == m))
            .filter(|r| filter.alignment.is_none_or(|a| r.alignment == a))
            .filter(|r| {
                filter
                    .topic
                    .as_ref()
                    .is_none_or(|t| self.topic_of(r) == Some(t))
            })
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    pub topic: Option<Topic>,
    pub model_id: Option<String>,
    pub alignment: Option<Alignment>,
}

impl Selection {
    pub fn topic(mut self, topic: &Topic) -> Self {
        self.topic = Some(topic.clone());
        self
    }

    pub fn model(mut self, model_id: &str) -> Self {
        self.model_id = Some(model_id.to_string());
        self
    }

    pub fn alignment(mut self, alignment: Alignment) -> Self {
        self.alignment = Some(alignment);
        self
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, line));
    }
    Ok(out)
}

/// Parses and validates an articles file against the declared topics.
pub fn parse_articles(path: &Path, topics: &TopicSet) -> Result<Vec<(usize, Article)>> {
    let mut out = Vec::new();
    for (line, raw) in read_lines(path)? {
        let article: Article = serde_json::from_str(&raw).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !topics.contains(article.topic.as_str()) {
            return Err(Error::UnknownTopic {
                path: path.to_path_buf(),
                line,
                topic: article.topic.to_string(),
            });
        }
        if article.article_id.is_empty() || article.text.trim().is_empty() {
            return Err(Error::InvalidRecord {
                path: path.to_path_buf(),
                line,
                message: "article_id and text must be non-empty".into(),
            });
        }
        out.push((line, article));
    }
    Ok(out)
}

/// Parses a summaries file and checks every `article_id` resolves in `corpus`.
pub fn parse_summaries(path: &Path, corpus: &Corpus) -> Result<Vec<(usize, SummaryRecord)>> {
    let mut out = Vec::new();
    for (line, raw) in read_lines(path)? {
        let record: SummaryRecord = serde_json::from_str(&raw).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if record.model_id.is_empty() {
            return Err(Error::InvalidRecord {
                path: path.to_path_buf(),
                line,
                message: "model_id must be non-empty".into(),
            });
        }
        if corpus.article(&record.article_id).is_none() {
            return Err(Error::DanglingArticle {
                path: path.to_path_buf(),
                line,
                article_id: record.article_id,
            });
        }
        out.push((line, record));
    }
    Ok(out)
}

/// Exclusive writer guard on a workspace directory.
struct WriteLock {
    path: PathBuf,
}

impl WriteLock {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WriteLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(root.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A directory holding `articles.jsonl`, `summaries.jsonl` and an optional
/// `topics.json`.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn topics(&self) -> Result<TopicSet> {
        let path = self.path(TOPICS_FILE);
        if !path.exists() {
            return Ok(TopicSet::default());
        }
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let set: TopicSet = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if set.topics.is_empty() {
            return Err(Error::Config(format!("{}: no topics declared", path.display())));
        }
        Ok(set)
    }

    pub fn write_topics(&self, topics: &TopicSet) -> Result<()> {
        let path = self.path(TOPICS_FILE);
        let body = serde_json::to_string_pretty(topics)?;
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(&self) -> Result<Corpus> {
        let mut corpus = Corpus::new(self.topics()?);
        let articles = self.path(ARTICLES_FILE);
        if articles.exists() {
            let lines = parse_articles(&articles, corpus.topics())?;
            corpus.add_articles(lines);
        }
        let summaries = self.path(SUMMARIES_FILE);
        if summaries.exists() {
            let lines = parse_summaries(&summaries, &corpus)?;
            corpus.add_summaries(lines);
        }
        Ok(corpus)
    }

    /// Validates `path` and appends the accepted records to the store.
    /// Malformed lines, unknown topics and dangling references abort the
    /// whole file; duplicates are skipped and reported.
    pub fn ingest(&self, path: &Path, kind: RecordKind) -> Result<IngestReport> {
        let _lock = WriteLock::acquire(&self.root)?;
        let mut corpus = self.load()?;
        match kind {
            RecordKind::Articles => {
                let lines = parse_articles(path, corpus.topics())?;
                let before: BTreeSet<String> = corpus.articles.keys().cloned().collect();
                let report = corpus.add_articles(lines);
                let fresh: Vec<&Article> = corpus
                    .articles()
                    .filter(|a| !before.contains(&a.article_id))
                    .collect();
                append_jsonl(&self.path(ARTICLES_FILE), &fresh)?;
                Ok(report)
            }
            RecordKind::Summaries => {
                let lines = parse_summaries(path, &corpus)?;
                let before: BTreeSet<SummaryKey> = corpus.summaries.keys().cloned().collect();
                let report = corpus.add_summaries(lines);
                let fresh: Vec<&SummaryRecord> = corpus
                    .summaries()
                    .filter(|s| !before.contains(&s.key()))
                    .collect();
                append_jsonl(&self.path(SUMMARIES_FILE), &fresh)?;
                Ok(report)
            }
        }
    }

    /// Inserts or replaces summaries and rewrites the summaries file.
    pub fn upsert_summaries(&self, records: Vec<SummaryRecord>) -> Result<usize> {
        let _lock = WriteLock::acquire(&self.root)?;
        let mut corpus = self.load()?;
        let n = records.len();
        for record in records {
            if corpus.article(&record.article_id).is_none() {
                return Err(Error::MissingData(format!(
                    "summary references unknown article_id `{}`",
                    record.article_id
                )));
            }
            corpus.upsert_summary(record);
        }
        self.replace_file(SUMMARIES_FILE, |w| corpus.write_summaries(w))?;
        Ok(n)
    }

    /// Rewrites both record files from `corpus`, replacing the store.
    pub fn save(&self, corpus: &Corpus) -> Result<()> {
        let _lock = WriteLock::acquire(&self.root)?;
        self.write_topics(corpus.topics())?;
        self.replace_file(ARTICLES_FILE, |w| corpus.write_articles(w))?;
        self.replace_file(SUMMARIES_FILE, |w| corpus.write_summaries(w))
    }

    fn replace_file<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let target = self.path(name);
        let tmp = self.path(&format!("{name}.tmp"));
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut writer = BufWriter::new(file);
        body(&mut writer)?;
        writer.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(writer);
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }
}

fn append_jsonl<T: Serialize>(path: &Path, records: &[&T]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicStats {
    pub topic: Topic,
    pub label: String,
    pub article_count: usize,
    pub mean_words_per_article: f64,
    pub mean_sentences_per_article: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLengthCell {
    pub model_id: String,
    pub alignment: Alignment,
    pub summary_count: usize,
    pub mean_words_per_summary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub topics: Vec<TopicStats>,
    pub summary_lengths: Vec<SummaryLengthCell>,
    /// Article counts by publication year, for articles that carry one.
    pub articles_per_year: BTreeMap<i32, usize>,
}

/// Per-topic article statistics and per-(model, alignment) summary lengths.
pub fn stats(corpus: &Corpus, topic: Option<&Topic>) -> Result<CorpusStats> {
    if let Some(t) = topic {
        if !corpus.topics().contains(t.as_str()) {
            return Err(Error::UnknownFilter {
                what: "topic",
                value: t.to_string(),
            });
        }
    }
    let in_scope = |a: &Article| topic.is_none_or(|t| &a.topic == t);
    if !corpus.articles().any(in_scope) {
        return Err(Error::MissingData("empty corpus".into()));
    }

    let mut topics = Vec::new();
    for def in &corpus.topics().topics {
        if topic.is_some_and(|t| t != &def.id) {
            continue;
        }
        let (mut n, mut words, mut sents) = (0usize, 0usize, 0usize);
        for a in corpus.articles().filter(|a| a.topic == def.id) {
            n += 1;
            words += text::word_count(&a.text);
            sents += text::sentence_count(&a.text);
        }
        if n == 0 {
            continue;
        }
        topics.push(TopicStats {
            topic: def.id.clone(),
            label: def.label.clone(),
            article_count: n,
            mean_words_per_article: words as f64 / n as f64,
            mean_sentences_per_article: sents as f64 / n as f64,
        });
    }

    let mut cells: BTreeMap<(String, Alignment), (usize, usize)> = BTreeMap::new();
    for record in corpus.summaries() {
        if let Some(t) = topic {
            if corpus.topic_of(record) != Some(t) {
                continue;
            }
        }
        let cell = cells
            .entry((record.model_id.clone(), record.alignment))
            .or_default();
        cell.0 += 1;
        cell.1 += record.word_count();
    }
    let summary_lengths = cells
        .into_iter()
        .map(|((model_id, alignment), (n, words))| SummaryLengthCell {
            model_id,
            alignment,
            summary_count: n,
            mean_words_per_summary: words as f64 / n as f64,
        })
        .collect();

    let mut articles_per_year = BTreeMap::new();
    for a in corpus.articles().filter(|a| in_scope(a)) {
        if let Some(y) = a.published_year {
            *articles_per_year.entry(y).or_insert(0) += 1;
        }
    }

    Ok(CorpusStats {
        topics,
        summary_lengths,
        articles_per_year,
    })
}
