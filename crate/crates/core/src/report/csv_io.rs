//! CSV artifacts with a `# key=value` metadata preamble.
//!
//! Floats are written with Rust's shortest round-trip formatting so that a
//! parsed artifact reproduces its source exactly. Empty cells are `None`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::TopicStats;
use crate::error::{Error, Result};
use crate::lexicon::{BiasEntry, BiasTable, Ideology};
use crate::matrix::LabeledMatrix;
use crate::monoculture::{ConsistencyIndex, OverlapMatrix, TransferMatrix};
use crate::separability::polarization::TopicSummary;
use crate::separability::{PolarizationReport, SeparabilityResult};
use crate::summarygen::LengthRow;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CsvDoc {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvDoc {
            meta: BTreeMap::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Invalid(format!("csv metadata lacks `{key}`")))
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Invalid(format!("metadata entry `{k}` cannot be encoded")));
            }
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Invalid(e.to_string()))?);
        Ok(out)
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut rest = raw;
        while let Some(line) = rest.strip_prefix("# ") {
            let (entry, tail) = line.split_once('\n').unwrap_or((line, ""));
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("bad metadata line `# {entry}`")))?;
            meta.insert(k.to_string(), v.to_string());
            rest = tail;
        }
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(CsvDoc { meta, header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Invalid(format!("`{s}` is not a number")))
}

pub fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Invalid(format!("`{s}` is not an integer")))
}

fn parse_bool(s: &str) -> Result<bool> {
    s.parse()
        .map_err(|_| Error::Invalid(format!("`{s}` is not a boolean")))
}

fn cell<'a>(row: &'a [String], i: usize) -> Result<&'a str> {
    row.get(i)
        .map(String::as_str)
        .ok_or_else(|| Error::Invalid(format!("row has no column {i}")))
}

/// A value with a canonical tabular form.
pub trait CsvArtifact: Sized {
    const KIND: &'static str;

    fn to_csv(&self) -> CsvDoc;

    fn from_csv(doc: &CsvDoc) -> Result<Self>;
}

fn check_kind<T: CsvArtifact>(doc: &CsvDoc) -> Result<()> {
    match doc.meta.get("kind") {
        Some(k) if k != T::KIND => Err(Error::Invalid(format!("expected a {} artifact, found {k}", T::KIND))),
        _ => Ok(()),
    }
}

fn matrix_doc(m: &LabeledMatrix) -> CsvDoc {
    let mut doc = CsvDoc::new(std::iter::once("row".to_string()).chain(m.col_labels.iter().cloned()));
    for (label, row) in m.row_labels.iter().zip(&m.cells) {
        doc.push(std::iter::once(label.clone()).chain(row.iter().map(|v| fmt_opt(*v))).collect());
    }
    doc
}

fn matrix_from(doc: &CsvDoc) -> Result<LabeledMatrix> {
    let col_labels = doc.header.iter().skip(1).cloned().collect();
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for row in &doc.rows {
        row_labels.push(cell(row, 0)?.to_string());
        cells.push(row[1..].iter().map(|s| parse_opt(s)).collect::<Result<Vec<_>>>()?);
    }
    LabeledMatrix::new(row_labels, col_labels, cells)
}

impl CsvArtifact for LabeledMatrix {
    const KIND: &'static str = "matrix";

    fn to_csv(&self) -> CsvDoc {
        matrix_doc(self).with_meta("kind", Self::KIND)
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        matrix_from(doc)
    }
}

impl CsvArtifact for ConsistencyIndex {
    const KIND: &'static str = "consistency_index";

    fn to_csv(&self) -> CsvDoc {
        matrix_doc(&self.overlap.matrix)
            .with_meta("kind", Self::KIND)
            .with_meta("ideology", self.overlap.ideology.as_str())
            .with_meta("n", self.overlap.n)
            .with_meta("diagonal_included", self.overlap.diagonal_included)
            .with_meta("overall_mean", fmt_f64(self.overall_mean))
            .with_meta("off_diagonal_mean", fmt_f64(self.off_diagonal_mean))
            .with_meta("note", &self.note)
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        Ok(ConsistencyIndex {
            overlap: OverlapMatrix {
                ideology: doc.meta("ideology")?.parse::<Ideology>()?,
                n: parse_int(doc.meta("n")?)?,
                diagonal_included: parse_bool(doc.meta("diagonal_included")?)?,
                matrix: matrix_from(doc)?,
            },
            overall_mean: parse_f64(doc.meta("overall_mean")?)?,
            off_diagonal_mean: parse_f64(doc.meta("off_diagonal_mean")?)?,
            note: doc.meta("note")?.to_string(),
        })
    }
}

impl CsvArtifact for TransferMatrix {
    const KIND: &'static str = "transfer_matrix";

    fn to_csv(&self) -> CsvDoc {
        matrix_doc(&self.matrix)
            .with_meta("kind", Self::KIND)
            .with_meta("contrast", self.contrast)
            .with_meta("seed", self.seed)
            .with_meta("diagonal_mean", fmt_f64(self.diagonal_mean))
            .with_meta("off_diagonal_mean", fmt_f64(self.off_diagonal_mean))
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        Ok(TransferMatrix {
            contrast: doc.meta("contrast")?.parse()?,
            matrix: matrix_from(doc)?,
            diagonal_mean: parse_f64(doc.meta("diagonal_mean")?)?,
            off_diagonal_mean: parse_f64(doc.meta("off_diagonal_mean")?)?,
            seed: parse_int(doc.meta("seed")?)?,
        })
    }
}

impl CsvArtifact for BiasTable {
    const KIND: &'static str = "bias_table";

    /// One row per scored token; `rank_*` is the 1-based position in the
    /// corresponding top list, empty if absent.
    fn to_csv(&self) -> CsvDoc {
        let rank = |list: &[String], t: &str| {
            list.iter().position(|x| x == t).map(|i| (i + 1).to_string()).unwrap_or_default()
        };
        let mut doc = CsvDoc::new(["token", "score", "count_dem", "count_rep", "rank_dem", "rank_rep"])
            .with_meta("kind", Self::KIND)
            .with_meta("n", self.n)
            .with_meta("vocab_threshold", self.vocab_threshold)
            .with_meta("truncated", self.truncated);
        for (token, e) in &self.entries {
            doc.push(vec![
                token.clone(),
                fmt_f64(e.score),
                e.count_dem.to_string(),
                e.count_rep.to_string(),
                rank(&self.top_dem, token),
                rank(&self.top_rep, token),
            ]);
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        let mut entries = BTreeMap::new();
        let mut dem = Vec::new();
        let mut rep = Vec::new();
        for row in &doc.rows {
            let token = cell(row, 0)?.to_string();
            entries.insert(
                token.clone(),
                BiasEntry {
                    score: parse_f64(cell(row, 1)?)?,
                    count_dem: parse_int(cell(row, 2)?)?,
                    count_rep: parse_int(cell(row, 3)?)?,
                },
            );
            if !cell(row, 4)?.is_empty() {
                dem.push((parse_int::<usize>(cell(row, 4)?)?, token.clone()));
            }
            if !cell(row, 5)?.is_empty() {
                rep.push((parse_int::<usize>(cell(row, 5)?)?, token));
            }
        }
        dem.sort();
        rep.sort();
        Ok(BiasTable {
            entries,
            vocab_threshold: parse_int(doc.meta("vocab_threshold")?)?,
            n: parse_int(doc.meta("n")?)?,
            top_dem: dem.into_iter().map(|(_, t)| t).collect(),
            top_rep: rep.into_iter().map(|(_, t)| t).collect(),
            truncated: parse_bool(doc.meta("truncated")?)?,
        })
    }
}

impl CsvArtifact for Vec<SeparabilityResult> {
    const KIND: &'static str = "separability";

    fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new([
            "topic",
            "model_id",
            "contrast",
            "seed",
            "neutral_count",
            "aligned_count",
            "mean_accuracy",
            "fold_accuracies",
        ])
        .with_meta("kind", Self::KIND);
        for r in self {
            let folds: Vec<String> = r.fold_accuracies.iter().map(|v| fmt_f64(*v)).collect();
            doc.push(vec![
                r.topic.clone(),
                r.model_id.clone(),
                r.contrast.to_string(),
                r.seed.to_string(),
                r.class_counts.0.to_string(),
                r.class_counts.1.to_string(),
                fmt_f64(r.mean_accuracy),
                folds.join(" "),
            ]);
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        doc.rows
            .iter()
            .map(|row| {
                Ok(SeparabilityResult {
                    topic: cell(row, 0)?.to_string(),
                    model_id: cell(row, 1)?.to_string(),
                    contrast: cell(row, 2)?.parse()?,
                    seed: parse_int(cell(row, 3)?)?,
                    class_counts: (parse_int(cell(row, 4)?)?, parse_int(cell(row, 5)?)?),
                    mean_accuracy: parse_f64(cell(row, 6)?)?,
                    fold_accuracies: cell(row, 7)?
                        .split_whitespace()
                        .map(parse_f64)
                        .collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}

impl CsvArtifact for PolarizationReport {
    const KIND: &'static str = "polarization_grid";

    /// The (topic x model) grid of P in percentage points.
    fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new(std::iter::once("topic".to_string()).chain(self.models.iter().cloned()))
            .with_meta("kind", Self::KIND);
        for (t, row) in self.topics.iter().zip(&self.cells) {
            doc.push(std::iter::once(t.clone()).chain(row.iter().map(|v| fmt_opt(*v))).collect());
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        let models: Vec<String> = doc.header.iter().skip(1).cloned().collect();
        let mut topics = Vec::new();
        let mut values = BTreeMap::new();
        for row in &doc.rows {
            let t = cell(row, 0)?.to_string();
            for (m, raw) in models.iter().zip(&row[1..]) {
                if let Some(v) = parse_opt(raw)? {
                    values.insert((t.clone(), m.clone()), v);
                }
            }
            topics.push(t);
        }
        PolarizationReport::from_cells(&topics, &models, &values, true)
    }
}

impl CsvArtifact for Vec<TopicSummary> {
    const KIND: &'static str = "polarization_summary";

    fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new(["topic", "mean", "max_magnitude"]).with_meta("kind", Self::KIND);
        for s in self {
            doc.push(vec![s.topic.clone(), fmt_opt(s.mean), fmt_opt(s.max_magnitude)]);
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        doc.rows
            .iter()
            .map(|row| {
                Ok(TopicSummary {
                    topic: cell(row, 0)?.to_string(),
                    mean: parse_opt(cell(row, 1)?)?,
                    max_magnitude: parse_opt(cell(row, 2)?)?,
                })
            })
            .collect()
    }
}

impl CsvArtifact for Vec<TopicStats> {
    const KIND: &'static str = "corpus_stats";

    fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new([
            "topic",
            "label",
            "article_count",
            "mean_words_per_article",
            "mean_sentences_per_article",
        ])
        .with_meta("kind", Self::KIND);
        for s in self {
            doc.push(vec![
                s.topic.to_string(),
                s.label.clone(),
                s.article_count.to_string(),
                fmt_f64(s.mean_words_per_article),
                fmt_f64(s.mean_sentences_per_article),
            ]);
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        doc.rows
            .iter()
            .map(|row| {
                Ok(TopicStats {
                    topic: crate::corpus::Topic::new(cell(row, 0)?),
                    label: cell(row, 1)?.to_string(),
                    article_count: parse_int(cell(row, 2)?)?,
                    mean_words_per_article: parse_f64(cell(row, 3)?)?,
                    mean_sentences_per_article: parse_f64(cell(row, 4)?)?,
                })
            })
            .collect()
    }
}

impl CsvArtifact for Vec<LengthRow> {
    const KIND: &'static str = "summary_lengths";

    fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new(["model_id", "democrat", "republican", "neutral", "aggregate"])
            .with_meta("kind", Self::KIND);
        for r in self {
            doc.push(vec![
                r.model_id.clone(),
                fmt_opt(r.democrat),
                fmt_opt(r.republican),
                fmt_opt(r.neutral),
                fmt_opt(r.aggregate),
            ]);
        }
        doc
    }

    fn from_csv(doc: &CsvDoc) -> Result<Self> {
        check_kind::<Self>(doc)?;
        doc.rows
            .iter()
            .map(|row| {
                Ok(LengthRow {
                    model_id: cell(row, 0)?.to_string(),
                    democrat: parse_opt(cell(row, 1)?)?,
                    republican: parse_opt(cell(row, 2)?)?,
                    neutral: parse_opt(cell(row, 3)?)?,
                    aggregate: parse_opt(cell(row, 4)?)?,
                })
            })
            .collect()
    }
}

/// Parses `raw` as the artifact type named by its `kind` metadata and
/// renders it again. Equal output means the file round-trips losslessly.
pub fn reencode(raw: &str) -> Result<String> {
    fn again<T: CsvArtifact>(doc: &CsvDoc) -> Result<String> {
        let mut out = T::from_csv(doc)?.to_csv();
        for (k, v) in &doc.meta {
            out.meta.entry(k.clone()).or_insert_with(|| v.clone());
        }
        out.render()
    }
    let doc = CsvDoc::parse(raw)?;
    match doc.meta("kind")? {
        LabeledMatrix::KIND => again::<LabeledMatrix>(&doc),
        ConsistencyIndex::KIND => again::<ConsistencyIndex>(&doc),
        TransferMatrix::KIND => again::<TransferMatrix>(&doc),
        BiasTable::KIND => again::<BiasTable>(&doc),
        <Vec<SeparabilityResult>>::KIND => again::<Vec<SeparabilityResult>>(&doc),
        PolarizationReport::KIND => again::<PolarizationReport>(&doc),
        <Vec<TopicSummary>>::KIND => again::<Vec<TopicSummary>>(&doc),
        <Vec<TopicStats>>::KIND => again::<Vec<TopicStats>>(&doc),
        <Vec<LengthRow>>::KIND => again::<Vec<LengthRow>>(&doc),
        other => Err(Error::Invalid(format!("unknown artifact kind `{other}`"))),
    }
}
