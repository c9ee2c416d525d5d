//! Cross-model homogeneity: vocabulary overlap of the most divergent tokens,
//! and transfer of neutral-vs-aligned classifiers between models.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SummaryRecord;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::lexicon::{BiasTable, Ideology};
use crate::matrix::LabeledMatrix;
use crate::separability::{
    balance, build_samples, cross_validate, evaluate, train_on, Contrast, CvConfig, Featurizer,
};

/// Pairwise overlap is normalized per pair by N. Summing raw intersection
/// counts over pairs cannot give a percentage bounded by 100.
pub const CI_NORMALIZATION_NOTE: &str =
    "cell = 100*|T_i & T_j|/N per pair; raw-count summation would exceed 100 for N > 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub ideology: Ideology,
    pub n: usize,
    pub diagonal_included: bool,
    /// Percentages in [0, 100].
    pub matrix: LabeledMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyIndex {
    pub overlap: OverlapMatrix,
    /// Mean over all cells, diagonal included.
    pub overall_mean: f64,
    /// Mean over cells with i != j.
    pub off_diagonal_mean: f64,
    pub note: String,
}

fn check_models(models: &[&str]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::Invalid(format!(
            "monoculture needs at least 2 models, got {}",
            models.len()
        )));
    }
    let unique: HashSet<&&str> = models.iter().collect();
    if unique.len() != models.len() {
        return Err(Error::Invalid("model ids must be unique".into()));
    }
    Ok(())
}

/// Overall mean implied by `k` models whose self-overlap is 100 and whose
/// cross-model cells average `off_diagonal_mean`.
pub fn overall_from_off_diagonal(k: usize, off_diagonal_mean: f64) -> f64 {
    let k = k as f64;
    (k * 100.0 + k * (k - 1.0) * off_diagonal_mean) / (k * k)
}

/// Percentage overlap of the top-N token sets of every model pair.
pub fn consistency_index(
    tables: &[(&str, &BiasTable)],
    ideology: Ideology,
    include_diagonal: bool,
) -> Result<ConsistencyIndex> {
    let models: Vec<&str> = tables.iter().map(|(m, _)| *m).collect();
    check_models(&models)?;
    let n = tables[0].1.n;
    if let Some((m, t)) = tables.iter().find(|(_, t)| t.n != n) {
        return Err(Error::Invalid(format!("model {m} has N = {}, expected {n}", t.n)));
    }
    let sets: Vec<BTreeSet<&str>> = tables
        .iter()
        .map(|(_, t)| t.top(ideology).iter().map(String::as_str).collect())
        .collect();
    if let Some(i) = sets.iter().position(BTreeSet::is_empty) {
        return Err(Error::Invalid(format!(
            "model {} has an empty {} token set",
            models[i],
            ideology.as_str()
        )));
    }
    let k = sets.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let overlap = sets[i].intersection(&sets[j]).count();
            let pct = 100.0 * overlap as f64 / n as f64;
            values[i][j] = pct;
            values[j][i] = pct;
        }
    }
    let total: f64 = values.iter().flatten().sum();
    let diagonal: f64 = (0..k).map(|i| values[i][i]).sum();
    let overall_mean = total / (k * k) as f64;
    let off_diagonal_mean = (total - diagonal) / (k * (k - 1)) as f64;
    let cells = values
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, v)| (include_diagonal || i != j).then_some(v))
                .collect()
        })
        .collect();
    let labels = models.iter().map(|m| m.to_string()).collect();
    Ok(ConsistencyIndex {
        overlap: OverlapMatrix {
            ideology,
            n,
            diagonal_included: include_diagonal,
            matrix: LabeledMatrix::square(labels, cells)?,
        },
        overall_mean,
        off_diagonal_mean,
        note: CI_NORMALIZATION_NOTE.to_string(),
    })
}

/// One model's neutral and aligned summaries for a contrast.
#[derive(Clone, Debug)]
pub struct ModelCorpus<'a> {
    pub model_id: String,
    pub neutral: Vec<&'a SummaryRecord>,
    pub aligned: Vec<&'a SummaryRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub contrast: Contrast,
    /// Rows are source models, columns target models; accuracies in [0, 1].
    pub matrix: LabeledMatrix,
    pub diagonal_mean: f64,
    pub off_diagonal_mean: f64,
    pub seed: u64,
}

/// Accuracy of each source model's classifier on every target model.
///
/// The diagonal holds the source's own cross-validated accuracy. Off-diagonal
/// cells come from one classifier trained on all of the source's data and
/// evaluated on the target's full, class-balanced set.
pub fn transfer_matrix(
    corpora: &[ModelCorpus<'_>],
    contrast: Contrast,
    featurizer: &Featurizer,
    seed: u64,
    cv: &CvConfig,
) -> Result<TransferMatrix> {
    let models: Vec<&str> = corpora.iter().map(|c| c.model_id.as_str()).collect();
    check_models(&models)?;
    for c in corpora {
        if c.neutral.is_empty() || c.aligned.is_empty() {
            return Err(Error::MissingData(format!(
                "model {} lacks neutral or {} summaries",
                c.model_id,
                contrast.aligned()
            )));
        }
    }
    let prepared = corpora
        .par_iter()
        .map(|c| build_samples(&c.neutral, &c.aligned, featurizer))
        .collect::<Result<Vec<_>>>()?;
    let dims: Vec<usize> = prepared
        .iter()
        .map(|(s, _)| s.first().map_or(0, |x| x.x.dims()))
        .collect();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::Invalid(format!(
            "feature-space mismatch across models: dims {dims:?}"
        )));
    }

    let k = corpora.len();
    let rows = (0..k)
        .into_par_iter()
        .map(|src| -> Result<Vec<f64>> {
            let (samples, n_groups) = &prepared[src];
            let folds = cross_validate(samples, *n_groups, seed, cv)?;
            let own = folds.iter().sum::<f64>() / folds.len() as f64;
            let all: Vec<_> = samples.iter().collect();
            let clf = train_on(&all, cv.train)?;
            (0..k)
                .map(|tgt| {
                    if tgt == src {
                        return Ok(own);
                    }
                    let target: Vec<_> = prepared[tgt].0.iter().collect();
                    let balanced = balance(&target, derive_seed(seed, &[2, src as u64, tgt as u64]))?;
                    evaluate(&clf, &balanced)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let diagonal_mean = (0..k).map(|i| rows[i][i]).sum::<f64>() / k as f64;
    let off_sum: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| rows[i][j])
        .sum();
    let labels = models.iter().map(|m| m.to_string()).collect();
    Ok(TransferMatrix {
        contrast,
        matrix: LabeledMatrix::from_values(labels, rows)?,
        diagonal_mean,
        off_diagonal_mean: off_sum / (k * (k - 1)) as f64,
        seed,
    })
}
