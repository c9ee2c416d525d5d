//! End-to-end audit run: every table and heatmap for a workspace, plus a
//! manifest of content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::csv_io::{CsvArtifact, CsvDoc};
use super::heatmap::{render_heatmap, HeatmapOptions};
use super::markdown;
use crate::corpus::{stats, Alignment, Corpus, Selection, SummaryRecord, Topic, Workspace};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, fnv1a64, sha256_hex};
use crate::lexicon::{bias_table, distribution, pool_tables, BiasTable, Ideology, Tokenizer};
use crate::lexicon::{DEFAULT_TOP_N, DEFAULT_VOCAB_THRESHOLD};
use crate::monoculture::{consistency_index, transfer_matrix, ModelCorpus, TransferMatrix};
use crate::separability::features::DEFAULT_HASH_DIMS;
use crate::separability::{
    diff_with, polarization_report, CellId, Contrast, CvConfig, EmbeddingTable, Featurizer, HashedNgrams,
    SeparabilityResult,
};
use crate::summarygen::summary_length_report;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FeaturizerConfig {
    Hashed {
        #[serde(default = "default_dims")]
        dims: usize,
    },
    Embeddings {
        path: PathBuf,
    },
}

fn default_dims() -> usize {
    DEFAULT_HASH_DIMS
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig::Hashed { dims: DEFAULT_HASH_DIMS }
    }
}

impl FeaturizerConfig {
    pub fn build(&self) -> Result<Featurizer> {
        match self {
            FeaturizerConfig::Hashed { dims } => Ok(Featurizer::Hashed(HashedNgrams::new(*dims, 1, 2)?)),
            FeaturizerConfig::Embeddings { path } => Ok(Featurizer::Embeddings(EmbeddingTable::load(path)?)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Svg,
    Markdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRunConfig {
    pub workspace: PathBuf,
    pub out_dir: PathBuf,
    /// Empty means every topic with articles.
    #[serde(default)]
    pub topics: Vec<String>,
    /// Empty means every model with summaries.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_threshold")]
    pub vocab_threshold: u64,
    #[serde(default)]
    pub featurizer: FeaturizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_formats")]
    pub formats: Vec<OutputFormat>,
    /// Also write one transfer matrix per topic next to the pooled one.
    #[serde(default)]
    pub transfer_per_topic: bool,
    /// Skip (topic, model) cells lacking an alignment instead of failing.
    #[serde(default)]
    pub allow_missing: bool,
}

fn default_n() -> usize {
    DEFAULT_TOP_N
}

fn default_threshold() -> u64 {
    DEFAULT_VOCAB_THRESHOLD
}

fn all_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Svg, OutputFormat::Markdown]
}

impl AuditRunConfig {
    pub fn new(workspace: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        AuditRunConfig {
            workspace: workspace.into(),
            out_dir: out_dir.into(),
            topics: Vec::new(),
            models: Vec::new(),
            n: DEFAULT_TOP_N,
            vocab_threshold: DEFAULT_VOCAB_THRESHOLD,
            featurizer: FeaturizerConfig::default(),
            seed: 0,
            formats: all_formats(),
            transfer_per_topic: false,
            allow_missing: false,
        }
    }

    /// Reads a JSON config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: AuditRunConfig =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.workspace);
        resolve(&mut cfg.out_dir);
        if let FeaturizerConfig::Embeddings { path } = &mut cfg.featurizer {
            resolve(path);
        }
        Ok(cfg)
    }

    fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }

    /// Hash of the settings that influence results; file locations excluded.
    pub fn analysis_hash(&self) -> String {
        let mut copy = self.clone();
        copy.workspace = PathBuf::new();
        copy.out_dir = PathBuf::new();
        let embeddings = match &self.featurizer {
            FeaturizerConfig::Embeddings { path } => {
                copy.featurizer = FeaturizerConfig::Embeddings { path: PathBuf::new() };
                fs::read(path).map(|b| sha256_hex(&b)).unwrap_or_default()
            }
            FeaturizerConfig::Hashed { .. } => String::new(),
        };
        let json = serde_json::to_string(&copy).expect("config serializes");
        sha256_hex(format!("{json}\n{embeddings}").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCoverage {
    pub topic: String,
    pub model_id: String,
    pub alignments: Vec<Alignment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub corpus_sha256: String,
    pub config_sha256: String,
    /// Hash over the corpus, config and every artifact's hash.
    pub run_sha256: String,
    pub config: AuditRunConfig,
    pub topics: Vec<String>,
    pub models: Vec<String>,
    pub missing: Vec<MissingCoverage>,
    pub notes: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn files_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.files.iter().filter(move |f| f.kind == kind)
    }
}

fn file_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

struct Writer<'a> {
    root: &'a Path,
    seed: u64,
    files: Vec<ManifestEntry>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            kind: kind.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn csv<T: CsvArtifact>(&mut self, rel: &str, value: &T, extra: &[(&str, String)]) -> Result<()> {
        let mut doc: CsvDoc = value.to_csv().with_meta("seed", self.seed);
        for (k, v) in extra {
            doc = doc.with_meta(k, v);
        }
        self.put(rel, T::KIND, doc.render()?.as_bytes())
    }
}

fn corpus_hash(corpus: &Corpus) -> Result<String> {
    let mut buf = Vec::new();
    corpus.write_articles(&mut buf)?;
    corpus.write_summaries(&mut buf)?;
    Ok(sha256_hex(&buf))
}

fn resolve_scope(corpus: &Corpus, cfg: &AuditRunConfig) -> Result<(Vec<Topic>, Vec<String>)> {
    let topics = if cfg.topics.is_empty() {
        corpus.topics_present()
    } else {
        for t in &cfg.topics {
            if !corpus.topics().contains(t) {
                return Err(Error::UnknownFilter { what: "topic", value: t.clone() });
            }
        }
        cfg.topics.iter().map(Topic::new).collect()
    };
    let known = corpus.model_ids();
    let models: Vec<String> = if cfg.models.is_empty() {
        known.into_iter().collect()
    } else {
        for m in &cfg.models {
            if !known.contains(m) {
                return Err(Error::UnknownFilter { what: "model_id", value: m.clone() });
            }
        }
        cfg.models.clone()
    };
    if topics.is_empty() || models.is_empty() {
        return Err(Error::MissingData("audit needs at least one topic and one model with summaries".into()));
    }
    Ok((topics, models))
}

type Cells<'a> = BTreeMap<(String, String, Alignment), Vec<&'a SummaryRecord>>;

fn collect_cells<'a>(corpus: &'a Corpus, topics: &[Topic], models: &[String]) -> Result<Cells<'a>> {
    let mut cells = BTreeMap::new();
    for t in topics {
        for m in models {
            for a in Alignment::ALL {
                let recs = corpus.select(&Selection::default().topic(t).model(m).alignment(a))?;
                cells.insert((t.to_string(), m.clone(), a), recs);
            }
        }
    }
    Ok(cells)
}

fn coverage_gaps(cells: &Cells<'_>, topics: &[Topic], models: &[String]) -> Vec<MissingCoverage> {
    let mut out = Vec::new();
    for t in topics {
        for m in models {
            let alignments: Vec<Alignment> = Alignment::ALL
                .into_iter()
                .filter(|a| cells[&(t.to_string(), m.clone(), *a)].is_empty())
                .collect();
            if !alignments.is_empty() {
                out.push(MissingCoverage { topic: t.to_string(), model_id: m.clone(), alignments });
            }
        }
    }
    out
}

/// Per-(topic, model) seed shared by both contrasts so they use the same folds.
pub fn cell_seed(seed: u64, topic: &str, model_id: &str) -> u64 {
    derive_seed(seed, &[fnv1a64(topic.as_bytes()), fnv1a64(model_id.as_bytes())])
}

/// Runs the whole audit and writes its artifacts under `cfg.out_dir`.
pub fn run_audit(cfg: &AuditRunConfig) -> Result<Manifest> {
    if cfg.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let workspace = Workspace::open(&cfg.workspace)?;
    let corpus = workspace.load()?;
    let (topics, models) = resolve_scope(&corpus, cfg)?;
    let cells = collect_cells(&corpus, &topics, &models)?;
    let missing = coverage_gaps(&cells, &topics, &models);
    if !missing.is_empty() && !cfg.allow_missing {
        let list: Vec<String> = missing
            .iter()
            .map(|g| {
                let names: Vec<&str> = g.alignments.iter().map(|a| a.as_str()).collect();
                format!("({}, {}) lacks {}", g.topic, g.model_id, names.join("+"))
            })
            .collect();
        return Err(Error::MissingData(format!("alignment coverage incomplete: {}", list.join("; "))));
    }
    let complete = |t: &str, m: &str| !missing.iter().any(|g| g.topic == t && g.model_id == m);
    let featurizer = cfg.featurizer.build()?;
    let cv = CvConfig::default();
    let mut notes = Vec::new();

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut w = Writer { root: &cfg.out_dir, seed: cfg.seed, files: Vec::new() };
    let csv = cfg.wants(OutputFormat::Csv);
    let mut md = String::new();
    md.push_str("# Audit report\n\n");
    md.push_str(&format!("Seed: {}. Top-N: {}. Vocabulary threshold: {}.\n\n", cfg.seed, cfg.n, cfg.vocab_threshold));

    // Corpus shape.
    let corpus_stats = stats(&corpus, None)?;
    let topic_stats: Vec<_> = corpus_stats
        .topics
        .into_iter()
        .filter(|s| topics.contains(&s.topic))
        .collect();
    let lengths: Vec<_> = summary_length_report(&corpus)
        .into_iter()
        .filter(|r| models.contains(&r.model_id))
        .collect();
    if csv {
        w.csv("stats/corpus_stats.csv", &topic_stats, &[])?;
        w.csv("stats/summary_lengths.csv", &lengths, &[])?;
    }
    md += "## Corpus\n\n";
    md += &markdown::stats_table(&topic_stats);
    md += "\n### Mean summary length (words)\n\n";
    md += &markdown::length_table(&lengths);

    // Lexical bias.
    let tokenizer = Tokenizer::default();
    let mut tables: Vec<(String, String, BiasTable)> = Vec::new();
    for t in &topics {
        for m in &models {
            if !complete(t.as_str(), m) {
                continue;
            }
            let key = |a| (t.to_string(), m.clone(), a);
            let dem = distribution("democrat", &cells[&key(Alignment::Democrat)], &tokenizer)?;
            let rep = distribution("republican", &cells[&key(Alignment::Republican)], &tokenizer)?;
            let table = bias_table(&dem, &rep, cfg.n, cfg.vocab_threshold)?;
            if table.truncated {
                notes.push(format!("bias table ({t}, {m}) has fewer than {} scored tokens", cfg.n));
            }
            if csv {
                w.csv(
                    &format!("bias/{}/{}.csv", file_part(t.as_str()), file_part(m)),
                    &table,
                    &[("topic", t.to_string()), ("model_id", m.clone())],
                )?;
            }
            tables.push((t.to_string(), m.clone(), table));
        }
    }
    md += "\n## Most divergent tokens\n\n";
    let refs: Vec<(String, String, &BiasTable)> = tables.iter().map(|(t, m, b)| (t.clone(), m.clone(), b)).collect();
    md += &markdown::top_tokens_table(&refs);

    // Separability and polarization.
    let mut jobs = Vec::new();
    for t in &topics {
        for m in &models {
            if complete(t.as_str(), m) {
                for c in Contrast::BOTH {
                    jobs.push((t.to_string(), m.clone(), c));
                }
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|(t, m, c)| {
            let neutral = &cells[&(t.clone(), m.clone(), Alignment::Neutral)];
            let aligned = &cells[&(t.clone(), m.clone(), c.aligned())];
            diff_with(CellId::new(t, m, *c), neutral, aligned, &featurizer, cell_seed(cfg.seed, t, m), &cv)
        })
        .collect::<Result<Vec<SeparabilityResult>>>()?;
    let topic_ids: Vec<String> = topics.iter().map(|t| t.to_string()).collect();
    let grid = polarization_report(&results, &topic_ids, &models, !missing.is_empty())?;
    grid.verify_topic_summary()?;
    if csv {
        w.csv("separability.csv", &results, &[])?;
        w.csv("polarization/grid.csv", &grid, &[])?;
        w.csv("polarization/summary.csv", &grid.topic_summary, &[])?;
    }
    md += "\n## Separability\n\n";
    md += &markdown::separability_table(&results);
    md += "\n## Polarization index (percentage points; D = Democratic lean, R = Republican lean)\n\n";
    md += &markdown::polarization_table(&grid);
    md += "\n### Per-topic mean and largest-magnitude cell\n\n";
    md += &markdown::topic_summary_table(&grid);

    // Monoculture.
    md += "\n## Monoculture\n\n";
    let mono_models: Vec<&String> = models
        .iter()
        .filter(|m| topics.iter().any(|t| complete(t.as_str(), m)))
        .collect();
    if mono_models.len() < 2 {
        let note = "monoculture skipped: fewer than two models with complete coverage".to_string();
        md += &format!("{note}\n");
        notes.push(note);
    } else {
        let pooled: Vec<(String, BiasTable)> = mono_models
            .iter()
            .map(|m| {
                let own: Vec<&BiasTable> = tables.iter().filter(|(_, tm, _)| tm == *m).map(|(_, _, b)| b).collect();
                pool_tables(&own, cfg.n).map(|b| ((*m).clone(), b))
            })
            .collect::<Result<_>>()?;
        let pooled_refs: Vec<(&str, &BiasTable)> = pooled.iter().map(|(m, b)| (m.as_str(), b)).collect();
        for ideology in Ideology::BOTH {
            let ci = consistency_index(&pooled_refs, ideology, true)?;
            let stem = format!("monoculture/ci_{}", ideology.as_str());
            if csv {
                w.csv(&format!("{stem}.csv"), &ci, &[])?;
            }
            if cfg.wants(OutputFormat::Svg) {
                let svg = render_heatmap(
                    &ci.overlap.matrix,
                    &HeatmapOptions {
                        title: format!("Top-{} {} token overlap (%)", ci.overlap.n, ideology.as_str()),
                        description: vec![format!("seed={}", cfg.seed), ci.note.clone()],
                        decimals: 2,
                    },
                )?;
                w.put(&format!("{stem}.svg"), "heatmap", svg.as_bytes())?;
            }
            md += &markdown::consistency_summary(&ci);
        }

        let featurizer = &featurizer;
        let transfer = |topic: Option<&Topic>, contrast: Contrast| -> Result<TransferMatrix> {
            let corpora: Vec<ModelCorpus<'_>> = mono_models
                .iter()
                .map(|m| {
                    let mut neutral = Vec::new();
                    let mut aligned = Vec::new();
                    for t in topics.iter().filter(|t| topic.is_none_or(|x| x == *t)) {
                        if complete(t.as_str(), m) {
                            neutral.extend(&cells[&(t.to_string(), (*m).clone(), Alignment::Neutral)]);
                            aligned.extend(&cells[&(t.to_string(), (*m).clone(), contrast.aligned())]);
                        }
                    }
                    ModelCorpus { model_id: (*m).clone(), neutral, aligned }
                })
                .collect();
            transfer_matrix(&corpora, contrast, featurizer, cfg.seed, &cv)
        };
        for contrast in Contrast::BOTH {
            let tm = transfer(None, contrast)?;
            let stem = format!("monoculture/transfer_{}", contrast.short_name());
            if csv {
                w.csv(&format!("{stem}.csv"), &tm, &[])?;
            }
            if cfg.wants(OutputFormat::Svg) {
                let pct = crate::matrix::LabeledMatrix::new(
                    tm.matrix.row_labels.clone(),
                    tm.matrix.col_labels.clone(),
                    tm.matrix
                        .cells
                        .iter()
                        .map(|r| r.iter().map(|v| v.map(|v| 100.0 * v)).collect())
                        .collect(),
                )?;
                let svg = render_heatmap(
                    &pct,
                    &HeatmapOptions {
                        title: format!("Transfer accuracy (%), {contrast}; rows train, columns test"),
                        description: vec![format!("seed={}", cfg.seed)],
                        decimals: 2,
                    },
                )?;
                w.put(&format!("{stem}.svg"), "heatmap", svg.as_bytes())?;
            }
            md += &markdown::transfer_summary(&tm);
            if cfg.transfer_per_topic && csv {
                for t in &topics {
                    match transfer(Some(t), contrast) {
                        Ok(tm) => w.csv(
                            &format!("{stem}__{}.csv", file_part(t.as_str())),
                            &tm,
                            &[("topic", t.to_string())],
                        )?,
                        Err(e) if e.is_missing_data() || matches!(e, Error::Invalid(_)) => {
                            notes.push(format!("per-topic transfer for {t} skipped: {e}"));
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }

    if !missing.is_empty() {
        md += "\n## Missing coverage\n\n";
        for g in &missing {
            let names: Vec<&str> = g.alignments.iter().map(|a| a.as_str()).collect();
            md += &format!("- ({}, {}): no {} summaries\n", g.topic, g.model_id, names.join(", "));
        }
    }
    if !notes.is_empty() {
        md += "\n## Notes\n\n";
        for n in &notes {
            md += &format!("- {n}\n");
        }
    }
    if cfg.wants(OutputFormat::Markdown) {
        w.put("report.md", "report", md.as_bytes())?;
    }

    let corpus_sha256 = corpus_hash(&corpus)?;
    let config_sha256 = cfg.analysis_hash();
    let mut run = format!("{corpus_sha256}\n{config_sha256}\n");
    for f in &w.files {
        run += &format!("{} {}\n", f.sha256, f.path);
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        corpus_sha256,
        config_sha256,
        run_sha256: sha256_hex(run.as_bytes()),
        config: cfg.clone(),
        topics: topic_ids,
        models,
        missing,
        notes,
        files: w.files,
    };
    let path = cfg.out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg: AuditRunConfig = serde_json::from_str(r#"{"workspace": "w", "out_dir": "o"}"#).unwrap();
        assert_eq!(cfg, AuditRunConfig::new("w", "o"));
        assert!(serde_json::from_str::<AuditRunConfig>(r#"{"workspace": "w", "out_dir": "o", "bogus": 1}"#).is_err());
        let emb: AuditRunConfig = serde_json::from_str(
            r#"{"workspace": "w", "out_dir": "o", "featurizer": {"mode": "embeddings", "path": "e.jsonl"}}"#,
        )
        .unwrap();
        assert_eq!(emb.featurizer, FeaturizerConfig::Embeddings { path: "e.jsonl".into() });
    }

    #[test]
    fn analysis_hash_ignores_locations_only() {
        let a = AuditRunConfig::new("w1", "o1");
        let b = AuditRunConfig::new("w2", "o2");
        assert_eq!(a.analysis_hash(), b.analysis_hash());
        let c = AuditRunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.analysis_hash(), c.analysis_hash());
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_part("gun_control"), "gun_control");
        assert_eq!(file_part("org/model 7b"), "org_model_7b");
    }
}
