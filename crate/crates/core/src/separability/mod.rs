//! Neutral-vs-aligned text separability and the polarization index.
//!
//! Separability of two summary sets is the cross-validated accuracy of a
//! binary classifier that predicts which set a summary came from, evaluated
//! on class-balanced held-out folds: 0.5 means indistinguishable, 1.0 fully
//! separable. Folds are assigned per article so that summaries of the same
//! article never straddle train and test.

pub mod classifier;
pub mod features;
pub mod polarization;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alignment, SummaryRecord};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

pub use classifier::{loss_and_gradient, LinearClassifier, TrainConfig};
pub use features::{featurize, ClassLabel, EmbeddingTable, FeatureVector, Featurizer, HashedNgrams};
pub use polarization::{polarization, polarization_report, PolarizationReport};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    NeutralVsDemocrat,
    NeutralVsRepublican,
}

impl Contrast {
    pub const BOTH: [Contrast; 2] = [Contrast::NeutralVsDemocrat, Contrast::NeutralVsRepublican];

    pub fn aligned(self) -> Alignment {
        match self {
            Contrast::NeutralVsDemocrat => Alignment::Democrat,
            Contrast::NeutralVsRepublican => Alignment::Republican,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Contrast::NeutralVsDemocrat => "democrat",
            Contrast::NeutralVsRepublican => "republican",
        }
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Contrast::NeutralVsDemocrat => "neutral_vs_democrat",
            Contrast::NeutralVsRepublican => "neutral_vs_republican",
        })
    }
}

impl FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "democrat" | "neutral_vs_democrat" => Ok(Contrast::NeutralVsDemocrat),
            "republican" | "neutral_vs_republican" => Ok(Contrast::NeutralVsRepublican),
            other => Err(Error::Invalid(format!("unknown contrast `{other}`"))),
        }
    }
}

/// Which (topic, model, contrast) a separability measurement belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub topic: String,
    pub model_id: String,
    pub contrast: Contrast,
}

impl CellId {
    pub fn new(topic: impl Into<String>, model_id: impl Into<String>, contrast: Contrast) -> Self {
        CellId {
            topic: topic.into(),
            model_id: model_id.into(),
            contrast,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: DEFAULT_FOLDS,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityResult {
    pub topic: String,
    pub model_id: String,
    pub contrast: Contrast,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// (neutral, aligned) record counts before test-fold balancing.
    pub class_counts: (usize, usize),
    pub seed: u64,
}

/// A featurized record tagged with its article group.
pub(crate) struct Sample {
    pub group: usize,
    pub x: FeatureVector,
    pub label: ClassLabel,
}

/// Featurizes both sets, labelling by set membership rather than by the
/// records' own alignment, and indexes article ids into groups.
pub(crate) fn build_samples(
    neutral: &[&SummaryRecord],
    aligned: &[&SummaryRecord],
    featurizer: &Featurizer,
) -> Result<(Vec<Sample>, usize)> {
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    for r in neutral.iter().chain(aligned) {
        groups.insert(r.article_id.as_str(), 0);
    }
    for (i, g) in groups.values_mut().enumerate() {
        *g = i;
    }
    let tagged = neutral
        .iter()
        .map(|r| (*r, ClassLabel::Neutral))
        .chain(aligned.iter().map(|r| (*r, ClassLabel::Aligned)));
    let mut samples = Vec::with_capacity(neutral.len() + aligned.len());
    for (r, label) in tagged {
        samples.push(Sample {
            group: groups[r.article_id.as_str()],
            x: featurizer.vectorize(r)?,
            label,
        });
    }
    Ok((samples, groups.len()))
}

/// Seeded shuffle of article groups, dealt round-robin into `k` folds.
pub(crate) fn assign_folds(n_groups: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_groups).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xf01d]));
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n_groups];
    for (rank, g) in order.into_iter().enumerate() {
        fold_of[g] = rank % k;
    }
    fold_of
}

/// Downsamples the majority class to the minority count. Which class is
/// the majority is decided by counts alone, so relabelling the classes
/// selects the same records.
pub(crate) fn balance<'a>(samples: &[&'a Sample], seed: u64) -> Result<Vec<&'a Sample>> {
    let (neutral, aligned): (Vec<&Sample>, Vec<&Sample>) =
        samples.iter().partition(|s| s.label == ClassLabel::Neutral);
    if neutral.is_empty() || aligned.is_empty() {
        return Err(Error::Invalid("degenerate single-class evaluation set".into()));
    }
    let (minority, majority) = if neutral.len() <= aligned.len() {
        (neutral, aligned)
    } else {
        (aligned, neutral)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, majority.len(), minority.len()).into_vec();
    keep.sort_unstable();
    let mut out = minority;
    out.extend(keep.into_iter().map(|i| majority[i]));
    Ok(out)
}

pub(crate) fn evaluate(clf: &LinearClassifier, samples: &[&Sample]) -> Result<f64> {
    let xs: Vec<&FeatureVector> = samples.iter().map(|s| &s.x).collect();
    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();
    clf.accuracy(&xs, &labels)
}

pub(crate) fn train_on(samples: &[&Sample], config: TrainConfig) -> Result<LinearClassifier> {
    let xs: Vec<&FeatureVector> = samples.iter().map(|s| &s.x).collect();
    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();
    if !labels.contains(&ClassLabel::Neutral) || !labels.contains(&ClassLabel::Aligned) {
        return Err(Error::Invalid("degenerate single-class training set".into()));
    }
    LinearClassifier::train(&xs, &labels, config)
}

/// Per-fold held-out accuracies of article-grouped k-fold cross-validation.
pub(crate) fn cross_validate(
    samples: &[Sample],
    n_groups: usize,
    seed: u64,
    cv: &CvConfig,
) -> Result<Vec<f64>> {
    if cv.folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {}", cv.folds)));
    }
    if n_groups < cv.folds {
        return Err(Error::Invalid(format!(
            "{n_groups} distinct articles is fewer than {} folds",
            cv.folds
        )));
    }
    let fold_of = assign_folds(n_groups, cv.folds, seed);
    (0..cv.folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<&Sample>, Vec<&Sample>) =
                samples.iter().partition(|s| fold_of[s.group] == fold);
            let test = balance(&test, derive_seed(seed, &[1, fold as u64]))
                .map_err(|e| Error::Invalid(format!("fold {fold}: {e}")))?;
            let clf = train_on(&train, cv.train)?;
            evaluate(&clf, &test)
        })
        .collect()
}

/// Separability of `aligned` from `neutral` for one cell, with the default
/// five folds and classifier settings.
pub fn diff(
    cell: CellId,
    neutral: &[&SummaryRecord],
    aligned: &[&SummaryRecord],
    featurizer: &Featurizer,
    seed: u64,
) -> Result<SeparabilityResult> {
    diff_with(cell, neutral, aligned, featurizer, seed, &CvConfig::default())
}

pub fn diff_with(
    cell: CellId,
    neutral: &[&SummaryRecord],
    aligned: &[&SummaryRecord],
    featurizer: &Featurizer,
    seed: u64,
    cv: &CvConfig,
) -> Result<SeparabilityResult> {
    if neutral.is_empty() || aligned.is_empty() {
        return Err(Error::MissingData(format!(
            "{} / {} / {}: need both neutral and aligned summaries",
            cell.topic, cell.model_id, cell.contrast
        )));
    }
    let (samples, n_groups) = build_samples(neutral, aligned, featurizer)?;
    let fold_accuracies = cross_validate(&samples, n_groups, seed, cv)?;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok(SeparabilityResult {
        topic: cell.topic,
        model_id: cell.model_id,
        contrast: cell.contrast,
        fold_accuracies,
        mean_accuracy,
        class_counts: (neutral.len(), aligned.len()),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(prefix: &str, n: usize, alignment: Alignment, text: impl Fn(usize) -> String) -> Vec<SummaryRecord> {
        (0..n)
            .map(|i| SummaryRecord::new(format!("{prefix}{i:04}"), "m", alignment, text(i)))
            .collect()
    }

    #[test]
    fn folds_cover_groups_evenly() {
        let folds = assign_folds(23, 5, 9);
        for f in 0..5 {
            let n = folds.iter().filter(|&&x| x == f).count();
            assert!(n == 4 || n == 5);
        }
        assert_eq!(folds, assign_folds(23, 5, 9));
        assert_ne!(folds, assign_folds(23, 5, 10));
    }

    #[test]
    fn exact_copies_are_indistinguishable() {
        let texts = |i: usize| format!("story {} about item{} and thing{}", i, i % 17, i % 5);
        let n = records("a", 600, Alignment::Neutral, texts);
        let d = records("a", 600, Alignment::Democrat, texts);
        let nr: Vec<&SummaryRecord> = n.iter().collect();
        let dr: Vec<&SummaryRecord> = d.iter().collect();
        let res = diff(
            CellId::new("t", "m", Contrast::NeutralVsDemocrat),
            &nr,
            &dr,
            &Featurizer::default(),
            3,
        )
        .unwrap();
        assert_eq!(res.fold_accuracies.len(), 5);
        assert!((res.mean_accuracy - 0.5).abs() <= 0.03, "{}", res.mean_accuracy);
    }

    #[test]
    fn too_few_articles() {
        let n = records("a", 4, Alignment::Neutral, |i| format!("n{i}"));
        let d = records("a", 4, Alignment::Democrat, |i| format!("d{i}"));
        let nr: Vec<&SummaryRecord> = n.iter().collect();
        let dr: Vec<&SummaryRecord> = d.iter().collect();
        let err = diff(CellId::new("t", "m", Contrast::NeutralVsDemocrat), &nr, &dr, &Featurizer::default(), 0);
        assert!(matches!(err, Err(Error::Invalid(_))));
    }

    #[test]
    fn single_class_fold_is_degenerate() {
        // Aligned summaries exist for only one article, so most folds have
        // no aligned test records.
        let n = records("a", 10, Alignment::Neutral, |i| format!("n{i}"));
        let d = records("a", 1, Alignment::Democrat, |i| format!("d{i}"));
        let nr: Vec<&SummaryRecord> = n.iter().collect();
        let dr: Vec<&SummaryRecord> = d.iter().collect();
        let err = diff(CellId::new("t", "m", Contrast::NeutralVsDemocrat), &nr, &dr, &Featurizer::default(), 0)
            .unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn balance_downsamples_majority() {
        let mk = |label| Sample {
            group: 0,
            x: FeatureVector::Dense(vec![1.0]),
            label,
        };
        let samples: Vec<Sample> = (0..7)
            .map(|i| mk(if i < 5 { ClassLabel::Neutral } else { ClassLabel::Aligned }))
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let out = balance(&refs, 1).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.iter().filter(|s| s.label == ClassLabel::Aligned).count(), 2);
    }

    #[test]
    fn contrast_names() {
        assert_eq!("democrat".parse::<Contrast>().unwrap(), Contrast::NeutralVsDemocrat);
        assert_eq!(
            "neutral_vs_republican".parse::<Contrast>().unwrap(),
            Contrast::NeutralVsRepublican
        );
        assert_eq!(Contrast::NeutralVsDemocrat.aligned(), Alignment::Democrat);
        assert_eq!(
            serde_json::to_string(&Contrast::NeutralVsRepublican).unwrap(),
            "\"neutral_vs_republican\""
        );
    }
}
