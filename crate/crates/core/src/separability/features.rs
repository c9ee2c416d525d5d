use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::corpus::{Alignment, SummaryKey, SummaryRecord};
use crate::error::{Error, Result};
use crate::hashing::fnv1a64;
use crate::lexicon::Tokenizer;

pub const DEFAULT_HASH_DIMS: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    HashedNgrams,
    ExternalEmbedding,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureVector {
    /// Sorted, de-duplicated `(index, value)` pairs.
    Sparse { dims: usize, entries: Vec<(u32, f64)> },
    Dense(Vec<f64>),
}

impl FeatureVector {
    pub fn dims(&self) -> usize {
        match self {
            FeatureVector::Sparse { dims, .. } => *dims,
            FeatureVector::Dense(v) => v.len(),
        }
    }

    pub fn source(&self) -> FeatureSource {
        match self {
            FeatureVector::Sparse { .. } => FeatureSource::HashedNgrams,
            FeatureVector::Dense(_) => FeatureSource::ExternalEmbedding,
        }
    }

    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            FeatureVector::Sparse { entries, .. } => {
                for &(i, v) in entries {
                    f(i as usize, v);
                }
            }
            FeatureVector::Dense(values) => {
                for (i, &v) in values.iter().enumerate() {
                    if v != 0.0 {
                        f(i, v);
                    }
                }
            }
        }
    }

    pub fn dot_dense(&self, weights: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_nonzero(|i, v| acc += weights[i] * v);
        acc
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each_nonzero(|_, v| acc += v * v);
        acc.sqrt()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        let dot = match (self, other) {
            (FeatureVector::Sparse { entries: a, .. }, FeatureVector::Sparse { entries: b, .. }) => {
                let (mut i, mut j, mut acc) = (0, 0, 0.0);
                while i < a.len() && j < b.len() {
                    match a[i].0.cmp(&b[j].0) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            acc += a[i].1 * b[j].1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                acc
            }
            (FeatureVector::Dense(a), b) | (b, FeatureVector::Dense(a)) => b.dot_dense(a),
        };
        dot / denom
    }
}

/// Binary class of a record in a neutral-vs-aligned contrast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Neutral,
    Aligned,
}

impl From<Alignment> for ClassLabel {
    fn from(a: Alignment) -> Self {
        match a {
            Alignment::Neutral => ClassLabel::Neutral,
            Alignment::Democrat | Alignment::Republican => ClassLabel::Aligned,
        }
    }
}

/// L2-normalized term frequencies of hashed word n-grams.
#[derive(Clone, Debug)]
pub struct HashedNgrams {
    dims: usize,
    ngram_min: usize,
    ngram_max: usize,
    tokenizer: Tokenizer,
}

impl Default for HashedNgrams {
    fn default() -> Self {
        HashedNgrams {
            dims: DEFAULT_HASH_DIMS,
            ngram_min: 1,
            ngram_max: 2,
            tokenizer: Tokenizer::keep_all(),
        }
    }
}

impl HashedNgrams {
    pub fn new(dims: usize, ngram_min: usize, ngram_max: usize) -> Result<Self> {
        if !dims.is_power_of_two() || dims > u32::MAX as usize {
            return Err(Error::Config(format!("hash dims {dims} must be a power of two")));
        }
        if ngram_min == 0 || ngram_min > ngram_max {
            return Err(Error::Config(format!(
                "invalid n-gram range {ngram_min}..={ngram_max}"
            )));
        }
        Ok(HashedNgrams {
            dims,
            ngram_min,
            ngram_max,
            tokenizer: Tokenizer::keep_all(),
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Returns `None` when the text has no tokens.
    pub fn vectorize(&self, text: &str) -> Option<FeatureVector> {
        let tokens = self.tokenizer.tokenize(text);
        if tokens.is_empty() {
            return None;
        }
        let mask = (self.dims - 1) as u64;
        let mut counts: HashMap<u32, f64> = HashMap::new();
        let mut gram = String::new();
        for n in self.ngram_min..=self.ngram_max {
            for window in tokens.windows(n) {
                gram.clear();
                for (k, t) in window.iter().enumerate() {
                    if k > 0 {
                        gram.push(' ');
                    }
                    gram.push_str(t);
                }
                let idx = (fnv1a64(gram.as_bytes()) & mask) as u32;
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        for e in &mut entries {
            e.1 /= norm;
        }
        Some(FeatureVector::Sparse {
            dims: self.dims,
            entries,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingRow {
    article_id: String,
    model_id: String,
    alignment: Alignment,
    vector: Vec<f64>,
}

/// Precomputed sentence embeddings keyed by summary.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dims: usize,
    vectors: HashMap<SummaryKey, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            let key = SummaryKey {
                article_id: row.article_id,
                model_id: row.model_id,
                alignment: row.alignment,
            };
            table.insert(key, row.vector).map_err(|e| Error::InvalidRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, key: SummaryKey, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(Error::Invalid("empty embedding vector".into()));
        }
        if self.vectors.is_empty() {
            self.dims = vector.len();
        } else if vector.len() != self.dims {
            return Err(Error::Invalid(format!(
                "embedding has {} dims, expected {}",
                vector.len(),
                self.dims
            )));
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Clone, Debug)]
pub enum Featurizer {
    Hashed(HashedNgrams),
    Embeddings(EmbeddingTable),
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer::Hashed(HashedNgrams::default())
    }
}

impl Featurizer {
    pub fn dims(&self) -> usize {
        match self {
            Featurizer::Hashed(h) => h.dims(),
            Featurizer::Embeddings(e) => e.dims(),
        }
    }

    pub fn vectorize(&self, record: &SummaryRecord) -> Result<FeatureVector> {
        match self {
            Featurizer::Hashed(h) => h.vectorize(&record.text).ok_or_else(|| {
                Error::Invalid(format!(
                    "zero-length text for ({}, {}, {})",
                    record.article_id, record.model_id, record.alignment
                ))
            }),
            Featurizer::Embeddings(table) => table
                .vectors
                .get(&record.key())
                .map(|v| FeatureVector::Dense(v.clone()))
                .ok_or_else(|| {
                    Error::MissingData(format!(
                        "no embedding row for ({}, {}, {})",
                        record.article_id, record.model_id, record.alignment
                    ))
                }),
        }
    }
}

/// One vector per record, labelled neutral or aligned by the record's alignment.
pub fn featurize(
    records: &[&SummaryRecord],
    featurizer: &Featurizer,
) -> Result<Vec<(FeatureVector, ClassLabel)>> {
    records
        .iter()
        .map(|r| Ok((featurizer.vectorize(r)?, ClassLabel::from(r.alignment))))
        .collect()
}
