//! Synthetic corpora with a known, controllable ideological signal.
//!
//! Every summary is `doc_length` tokens. Each token of a Democrat-aligned
//! summary is replaced, with probability `injection_rate`, by a uniformly
//! drawn Democrat marker; Republican-aligned summaries do the same with
//! Republican markers. A neutral summary takes a Democrat marker with
//! probability `neutral_mix * injection_rate` and a Republican marker with
//! probability `(1 - neutral_mix) * injection_rate`. All other tokens are
//! uniform draws from `base_vocab`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alignment, Article, Corpus, SummaryRecord, Topic, TopicSet};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, fnv1a64};

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub base_vocab: Vec<String>,
    pub dem_markers: Vec<String>,
    pub rep_markers: Vec<String>,
    pub injection_rate: f64,
    pub neutral_mix: f64,
    pub doc_length: usize,
    pub docs_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            base_vocab: numbered("w", 400),
            dem_markers: numbered("dmark", 10),
            rep_markers: numbered("rmark", 10),
            injection_rate: 0.1,
            neutral_mix: 0.5,
            doc_length: 50,
            docs_per_class: 500,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.injection_rate) || !unit.contains(&self.neutral_mix) {
            return Err(Error::Config(format!(
                "injection_rate {} and neutral_mix {} must lie in [0, 1]",
                self.injection_rate, self.neutral_mix
            )));
        }
        if self.base_vocab.is_empty() && self.injection_rate < 1.0 {
            return Err(Error::Config("base_vocab is empty".into()));
        }
        if self.injection_rate > 0.0 && (self.dem_markers.is_empty() || self.rep_markers.is_empty()) {
            return Err(Error::Config(
                "marker lists must be non-empty when injection_rate > 0".into(),
            ));
        }
        if self.doc_length == 0 || self.docs_per_class == 0 {
            return Err(Error::Config("doc_length and docs_per_class must be positive".into()));
        }
        let base: HashSet<&String> = self.base_vocab.iter().collect();
        let dem: HashSet<&String> = self.dem_markers.iter().collect();
        for m in &self.dem_markers {
            if base.contains(m) {
                return Err(Error::Config(format!("marker `{m}` also in base_vocab")));
            }
        }
        for m in &self.rep_markers {
            if base.contains(m) || dem.contains(m) {
                return Err(Error::Config(format!("marker `{m}` is not disjoint")));
            }
        }
        Ok(())
    }

    fn markers(&self, alignment: Alignment) -> &[String] {
        match alignment {
            Alignment::Democrat => &self.dem_markers,
            Alignment::Republican => &self.rep_markers,
            Alignment::Neutral => &[],
        }
    }

    /// Probabilities that a token of an `alignment` summary is a Democrat
    /// or a Republican marker.
    fn marker_probs(&self, alignment: Alignment) -> (f64, f64) {
        let rate = self.injection_rate;
        match alignment {
            Alignment::Democrat => (rate, 0.0),
            Alignment::Republican => (0.0, rate),
            Alignment::Neutral => (self.neutral_mix * rate, (1.0 - self.neutral_mix) * rate),
        }
    }

    fn document(&self, rng: &mut ChaCha8Rng, alignment: Alignment) -> String {
        let (p_dem, p_rep) = self.marker_probs(alignment);
        let mut words = Vec::with_capacity(self.doc_length);
        for _ in 0..self.doc_length {
            let u: f64 = rng.random();
            let pool = if u < p_dem {
                self.markers(Alignment::Democrat)
            } else if u < p_dem + p_rep {
                self.markers(Alignment::Republican)
            } else {
                &self.base_vocab
            };
            words.push(pool[rng.random_range(0..pool.len())].as_str());
        }
        let mut text = words.join(" ");
        text.push('.');
        text
    }

    /// Expected relative frequency of `token` in summaries of `alignment`.
    pub fn expected_freq(&self, alignment: Alignment, token: &str) -> Result<f64> {
        let (p_dem, p_rep) = self.marker_probs(alignment);
        let share = |list: &[String]| list.iter().filter(|t| t.as_str() == token).count() as f64 / list.len().max(1) as f64;
        if self.dem_markers.iter().any(|t| t == token) {
            Ok(p_dem * share(&self.dem_markers))
        } else if self.rep_markers.iter().any(|t| t == token) {
            Ok(p_rep * share(&self.rep_markers))
        } else if self.base_vocab.iter().any(|t| t == token) {
            Ok((1.0 - p_dem - p_rep) * share(&self.base_vocab))
        } else {
            Err(Error::Invalid(format!("token `{token}` is not in the synthetic vocabulary")))
        }
    }
}

/// Analytic expectation of the bias score of `token` under `spec`.
pub fn expected_bias(spec: &SynthSpec, token: &str) -> Result<f64> {
    Ok(spec.expected_freq(Alignment::Republican, token)? - spec.expected_freq(Alignment::Democrat, token)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthOutput {
    pub articles: Vec<Article>,
    pub summaries: Vec<SummaryRecord>,
}

pub fn article_id(topic: &str, index: usize) -> String {
    format!("{topic}-{index:05}")
}

fn synth_articles(spec: &SynthSpec, topic: &str) -> Vec<Article> {
    (0..spec.docs_per_class)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[fnv1a64(b"article"), fnv1a64(topic.as_bytes()), i as u64],
            ));
            let body: Vec<&str> = (0..30)
                .map(|_| spec.base_vocab[rng.random_range(0..spec.base_vocab.len())].as_str())
                .collect();
            Article {
                article_id: article_id(topic, i),
                topic: Topic::new(topic),
                text: format!(
                    "Synthetic article {i} on {topic}. {}. {}.",
                    body[..15].join(" "),
                    body[15..].join(" ")
                ),
                source_url: None,
                published_year: None,
            }
        })
        .collect()
}

fn synth_summaries(spec: &SynthSpec, model_id: &str, topic: &str) -> Vec<SummaryRecord> {
    let mut out = Vec::with_capacity(spec.docs_per_class * 3);
    for i in 0..spec.docs_per_class {
        for (a, alignment) in Alignment::ALL.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[fnv1a64(model_id.as_bytes()), fnv1a64(topic.as_bytes()), i as u64, a as u64],
            ));
            out.push(SummaryRecord::new(
                article_id(topic, i),
                model_id,
                alignment,
                spec.document(&mut rng, alignment),
            ));
        }
    }
    out
}

/// Articles plus the three-way summaries of one pseudo-model on one topic.
pub fn generate_synth(spec: &SynthSpec, model_id: &str, topic: &str) -> Result<SynthOutput> {
    spec.validate()?;
    Ok(SynthOutput {
        articles: synth_articles(spec, topic),
        summaries: synth_summaries(spec, model_id, topic),
    })
}

/// A pseudo-model; unset fields inherit from the corpus-level spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoModel {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dem_markers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_markers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_mix: Option<f64>,
}

impl PseudoModel {
    pub fn new(model_id: impl Into<String>) -> Self {
        PseudoModel {
            model_id: model_id.into(),
            dem_markers: None,
            rep_markers: None,
            injection_rate: None,
            neutral_mix: None,
        }
    }

    pub fn resolve(&self, base: &SynthSpec) -> SynthSpec {
        SynthSpec {
            dem_markers: self.dem_markers.clone().unwrap_or_else(|| base.dem_markers.clone()),
            rep_markers: self.rep_markers.clone().unwrap_or_else(|| base.rep_markers.clone()),
            injection_rate: self.injection_rate.unwrap_or(base.injection_rate),
            neutral_mix: self.neutral_mix.unwrap_or(base.neutral_mix),
            ..base.clone()
        }
    }
}

/// A multi-topic, multi-model synthetic workspace description. This is the
/// schema of the `synth --spec` file: the `SynthSpec` fields at top level plus
/// optional `topics` and `models`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    #[serde(flatten)]
    pub spec: SynthSpec,
    #[serde(default = "default_topics")]
    pub topics: Vec<String>,
    #[serde(default = "default_models")]
    pub models: Vec<PseudoModel>,
}

fn default_topics() -> Vec<String> {
    vec!["synthetic".to_string()]
}

fn default_models() -> Vec<PseudoModel> {
    vec![PseudoModel::new("synthA")]
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        SynthCorpusSpec {
            spec: SynthSpec::default(),
            topics: default_topics(),
            models: default_models(),
        }
    }
}

/// Pseudo-model ids `synthA`, `synthB`, ...
pub fn pseudo_model_ids(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let letter = (b'A' + (i % 26) as u8) as char;
            if i < 26 {
                format!("synth{letter}")
            } else {
                format!("synth{letter}{}", i / 26)
            }
        })
        .collect()
}

pub fn generate_corpus(spec: &SynthCorpusSpec) -> Result<Corpus> {
    if spec.topics.is_empty() || spec.models.is_empty() {
        return Err(Error::Config("synthetic corpus needs at least one topic and one model".into()));
    }
    let ids: HashSet<&str> = spec.models.iter().map(|m| m.model_id.as_str()).collect();
    if ids.len() != spec.models.len() {
        return Err(Error::Config("pseudo-model ids must be unique".into()));
    }
    let mut corpus = Corpus::new(TopicSet::from_ids(spec.topics.iter().cloned()));
    let mut line = 0;
    for topic in &spec.topics {
        spec.spec.validate()?;
        let articles = synth_articles(&spec.spec, topic);
        corpus.add_articles(
            articles
                .into_iter()
                .map(|a| {
                    line += 1;
                    (line, a)
                })
                .collect(),
        );
        for model in &spec.models {
            let resolved = model.resolve(&spec.spec);
            resolved.validate()?;
            let summaries = synth_summaries(&resolved, &model.model_id, topic);
            corpus.add_summaries(
                summaries
                    .into_iter()
                    .map(|s| {
                        line += 1;
                        (line, s)
                    })
                    .collect(),
            );
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_expectations() {
        let spec = SynthSpec {
            injection_rate: 0.5,
            ..SynthSpec::default()
        };
        assert!((expected_bias(&spec, "dmark003").unwrap() + 0.05).abs() < 1e-12);
        let spec = SynthSpec {
            injection_rate: 0.2,
            rep_markers: numbered("r", 4),
            ..SynthSpec::default()
        };
        assert!((expected_bias(&spec, "r002").unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(expected_bias(&spec, "w010").unwrap(), 0.0);
        assert!(expected_bias(&spec, "nope").is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec {
            docs_per_class: 20,
            ..SynthSpec::default()
        };
        let a = generate_synth(&spec, "synthA", "t").unwrap();
        let b = generate_synth(&spec, "synthA", "t").unwrap();
        assert_eq!(a, b);
        let c = generate_synth(&SynthSpec { seed: 1, ..spec }, "synthA", "t").unwrap();
        assert_ne!(a.summaries, c.summaries);
    }

    #[test]
    fn documents_have_fixed_length() {
        let spec = SynthSpec {
            docs_per_class: 5,
            doc_length: 17,
            injection_rate: 0.7,
            ..SynthSpec::default()
        };
        let out = generate_synth(&spec, "m", "t").unwrap();
        assert_eq!(out.summaries.len(), 15);
        assert!(out.summaries.iter().all(|s| s.word_count() == 17));
        assert_eq!(out.articles.len(), 5);
    }

    #[test]
    fn full_injection_uses_only_markers() {
        let spec = SynthSpec {
            docs_per_class: 3,
            doc_length: 20,
            injection_rate: 1.0,
            ..SynthSpec::default()
        };
        let out = generate_synth(&spec, "m", "t").unwrap();
        for s in out.summaries.iter().filter(|s| s.alignment == Alignment::Democrat) {
            assert!(s.text.trim_end_matches('.').split(' ').all(|w| w.starts_with("dmark")));
        }
    }

    #[test]
    fn validation() {
        let bad = SynthSpec {
            dem_markers: vec![],
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
        let ok = SynthSpec {
            dem_markers: vec![],
            injection_rate: 0.0,
            ..SynthSpec::default()
        };
        assert!(ok.validate().is_ok());
        let overlap = SynthSpec {
            rep_markers: vec!["dmark001".into()],
            ..SynthSpec::default()
        };
        assert!(overlap.validate().is_err());
        assert!(SynthSpec { neutral_mix: 1.5, ..SynthSpec::default() }.validate().is_err());
    }

    #[test]
    fn corpus_spec_from_partial_json() {
        let spec: SynthCorpusSpec = serde_json::from_str(
            r#"{"docs_per_class": 4, "topics": ["a", "b"], "models": [{"model_id": "synthA"}, {"model_id": "synthB", "neutral_mix": 0.9}]}"#,
        )
        .unwrap();
        assert_eq!(spec.spec.doc_length, 50);
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.article_count(), 8);
        assert_eq!(corpus.summary_count(), 2 * 2 * 4 * 3);
        assert_eq!(pseudo_model_ids(3), ["synthA", "synthB", "synthC"]);
    }
}
