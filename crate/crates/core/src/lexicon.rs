//! Tokenization, unigram distributions and token bias scores.
//!
//! A token's bias score is its relative frequency in the Republican-aligned
//! corpus minus its relative frequency in the Democrat-aligned corpus, so
//! positive scores mark Republican-leaning usage and negative scores mark
//! Democrat-leaning usage.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::SummaryRecord;
use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub const DEFAULT_TOP_N: usize = 20;
pub const DEFAULT_VOCAB_THRESHOLD: u64 = 5;

/// Lowercasing word tokenizer with a stopword filter and optional light
/// suffix stemming.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
    stem: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::with_stopword_list(DEFAULT_STOPWORDS)
    }
}

impl Tokenizer {
    /// Parses a stopword list: one word per line, `#` starts a comment.
    pub fn with_stopword_list(list: &str) -> Self {
        let stopwords = list
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Tokenizer {
            stopwords,
            stem: false,
        }
    }

    /// A tokenizer that keeps every word.
    pub fn keep_all() -> Self {
        Tokenizer {
            stopwords: HashSet::new(),
            stem: false,
        }
    }

    pub fn with_stemming(mut self, stem: bool) -> Self {
        self.stem = stem;
        self
    }

    pub fn stopword_count(&self) -> usize {
        self.stopwords.len()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut piece = String::new();
        for ch in text.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() || matches!(ch, '+' | '-' | '\'' | '\u{2019}') {
                piece.push(ch);
            } else if !piece.is_empty() {
                self.flush(&mut piece, &mut out);
            }
        }
        if !piece.is_empty() {
            self.flush(&mut piece, &mut out);
        }
        out
    }

    fn flush(&self, piece: &mut String, out: &mut Vec<String>) {
        let token = normalize_piece(piece);
        piece.clear();
        let Some(mut token) = token else { return };
        if self.stem {
            token = light_stem(token);
        }
        if !self.stopwords.contains(&token) {
            out.push(token);
        }
    }
}

fn normalize_piece(piece: &str) -> Option<String> {
    let mut s = piece;
    for suffix in ["'s", "\u{2019}s"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            s = stripped;
        }
    }
    let mut token: String = s.chars().filter(|c| !matches!(c, '\'' | '\u{2019}')).collect();
    // '+' survives at the end ("lgbtq+") and inside; '-' only inside.
    let trimmed = token.trim_start_matches(['+', '-']).trim_end_matches('-');
    if !trimmed.chars().any(char::is_alphanumeric) {
        return None;
    }
    if trimmed.len() != token.len() {
        token = trimmed.to_string();
    }
    Some(token)
}

fn light_stem(mut token: String) -> String {
    if token.ends_with("ing") && token.chars().count() > 5 {
        token.truncate(token.len() - 3);
    } else if token.ends_with('s') && !token.ends_with("ss") && token.chars().count() > 3 {
        token.pop();
    }
    token
}

/// Unigram counts for one sub-corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub corpus_label: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl TokenDistribution {
    pub fn from_texts<'a, I>(label: impl Into<String>, texts: I, tokenizer: &Tokenizer) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let label = label.into();
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for text in texts {
            for token in tokenizer.tokenize(text) {
                *counts.entry(token).or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyDistribution(label));
        }
        Ok(TokenDistribution {
            corpus_label: label,
            counts,
            total,
        })
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn freq(&self, token: &str) -> f64 {
        self.count(token) as f64 / self.total as f64
    }
}

/// Unigram distribution over the concatenated texts of `records`.
pub fn distribution(
    label: impl Into<String>,
    records: &[&SummaryRecord],
    tokenizer: &Tokenizer,
) -> Result<TokenDistribution> {
    TokenDistribution::from_texts(label, records.iter().map(|r| r.text.as_str()), tokenizer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub score: f64,
    pub count_dem: u64,
    pub count_rep: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub entries: BTreeMap<String, BiasEntry>,
    pub vocab_threshold: u64,
    pub n: usize,
    /// Most Democrat-leaning first.
    pub top_dem: Vec<String>,
    /// Most Republican-leaning first.
    pub top_rep: Vec<String>,
    /// Set when fewer than `n` tokens survived the threshold.
    pub truncated: bool,
}

impl BiasTable {
    pub fn score(&self, token: &str) -> Option<f64> {
        self.entries.get(token).map(|e| e.score)
    }

    pub fn top(&self, ideology: Ideology) -> &[String] {
        match ideology {
            Ideology::Democrat => &self.top_dem,
            Ideology::Republican => &self.top_rep,
        }
    }

    fn from_entries(entries: BTreeMap<String, BiasEntry>, n: usize, vocab_threshold: u64) -> Self {
        let mut ranked: Vec<(&String, f64)> = entries.iter().map(|(t, e)| (t, e.score)).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        let top_dem: Vec<String> = ranked.iter().take(n).map(|(t, _)| (*t).clone()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let top_rep: Vec<String> = ranked.iter().take(n).map(|(t, _)| (*t).clone()).collect();
        let truncated = entries.len() < n;
        if truncated {
            log::warn!(
                "only {} tokens reach the vocabulary threshold {vocab_threshold}; top lists truncated below {n}",
                entries.len()
            );
        }
        BiasTable {
            entries,
            vocab_threshold,
            n,
            top_dem,
            top_rep,
            truncated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ideology {
    Democrat,
    Republican,
}

impl Ideology {
    pub const BOTH: [Ideology; 2] = [Ideology::Democrat, Ideology::Republican];

    pub fn as_str(self) -> &'static str {
        match self {
            Ideology::Democrat => "democrat",
            Ideology::Republican => "republican",
        }
    }
}

impl std::str::FromStr for Ideology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "democrat" => Ok(Ideology::Democrat),
            "republican" => Ok(Ideology::Republican),
            other => Err(Error::Invalid(format!("unknown ideology `{other}`"))),
        }
    }
}

/// Scores every token of the union vocabulary whose combined count reaches
/// `vocab_threshold`, and extracts the `n` most divergent tokens per side.
/// Ties are broken lexicographically.
pub fn bias_table(
    dem: &TokenDistribution,
    rep: &TokenDistribution,
    n: usize,
    vocab_threshold: u64,
) -> Result<BiasTable> {
    if n == 0 {
        return Err(Error::Invalid("top-N size must be at least 1".into()));
    }
    if dem.total == 0 {
        return Err(Error::EmptyDistribution(dem.corpus_label.clone()));
    }
    if rep.total == 0 {
        return Err(Error::EmptyDistribution(rep.corpus_label.clone()));
    }
    let mut entries = BTreeMap::new();
    let vocab = dem.counts.keys().chain(rep.counts.keys());
    for token in vocab {
        if entries.contains_key(token) {
            continue;
        }
        let count_dem = dem.count(token);
        let count_rep = rep.count(token);
        if count_dem + count_rep < vocab_threshold {
            continue;
        }
        let score = rep.freq(token) - dem.freq(token);
        entries.insert(
            token.clone(),
            BiasEntry {
                score,
                count_dem,
                count_rep,
            },
        );
    }
    Ok(BiasTable::from_entries(entries, n, vocab_threshold))
}

/// Merges per-topic tables of one model into a single table: each token keeps
/// the entry with the largest |B| across topics (earliest table on ties), and
/// the top lists are re-ranked from the merged scores.
pub fn pool_tables(tables: &[&BiasTable], n: usize) -> Result<BiasTable> {
    let Some(first) = tables.first() else {
        return Err(Error::MissingData("no bias tables to pool".into()));
    };
    let mut merged: BTreeMap<String, BiasEntry> = BTreeMap::new();
    for table in tables {
        for (token, entry) in &table.entries {
            match merged.get(token) {
                Some(existing) if existing.score.abs() >= entry.score.abs() => {}
                _ => {
                    merged.insert(token.clone(), entry.clone());
                }
            }
        }
    }
    Ok(BiasTable::from_entries(merged, n, first.vocab_threshold))
}
