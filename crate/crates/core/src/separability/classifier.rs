//! L2-regularized logistic regression trained by full-batch gradient descent.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::features::{ClassLabel, FeatureVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Training stops once the gradient norm falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2: 1e-4,
            max_epochs: 500,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

/// Rows in a compacted feature space: only columns that occur in the
/// training data are kept, since the rest stay at zero under gradient descent.
struct Design {
    rows: Vec<Vec<(usize, f64)>>,
    columns: Vec<usize>,
}

impl Design {
    fn compact(xs: &[&FeatureVector]) -> Self {
        let mut index: HashMap<usize, usize> = HashMap::new();
        let mut columns = Vec::new();
        let mut rows = Vec::with_capacity(xs.len());
        for x in xs {
            let mut row = Vec::new();
            x.for_each_nonzero(|i, v| {
                let c = *index.entry(i).or_insert_with(|| {
                    columns.push(i);
                    columns.len() - 1
                });
                row.push((c, v));
            });
            rows.push(row);
        }
        Design { rows, columns }
    }

    fn identity(xs: &[&FeatureVector]) -> Self {
        let rows = xs
            .iter()
            .map(|x| {
                let mut row = Vec::new();
                x.for_each_nonzero(|i, v| row.push((i, v)));
                row
            })
            .collect();
        let dims = xs.first().map_or(0, |x| x.dims());
        Design {
            rows,
            columns: (0..dims).collect(),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus `l2/2 * |w|^2`, and its gradient.
fn objective(design: &Design, ys: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = design.rows.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (row, &y) in design.rows.iter().zip(ys) {
        let z = b + row.iter().map(|&(c, v)| w[c] * v).sum::<f64>();
        // -[y ln p + (1-y) ln(1-p)] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        for &(c, v) in row {
            grad[c] += residual * v;
        }
        grad_b += residual;
    }
    let mut sq = 0.0;
    for (g, &wi) in grad.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
        sq += wi * wi;
    }
    (loss / n + 0.5 * l2 * sq, grad, grad_b / n)
}

fn targets(labels: &[ClassLabel]) -> Vec<f64> {
    labels
        .iter()
        .map(|l| match l {
            ClassLabel::Aligned => 1.0,
            ClassLabel::Neutral => 0.0,
        })
        .collect()
}

/// Training objective and its gradient with respect to dense `weights` and
/// `bias`, over the full feature space.
pub fn loss_and_gradient(
    xs: &[&FeatureVector],
    labels: &[ClassLabel],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    objective(&Design::identity(xs), &targets(labels), weights, bias, l2)
}

impl LinearClassifier {
    pub fn train(xs: &[&FeatureVector], labels: &[ClassLabel], config: TrainConfig) -> Result<Self> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "training set has {} vectors and {} labels",
                xs.len(),
                labels.len()
            )));
        }
        let dims = xs[0].dims();
        if xs.iter().any(|x| x.dims() != dims) {
            return Err(Error::Invalid("training vectors differ in dimension".into()));
        }
        let design = Design::compact(xs);
        let ys = targets(labels);
        let mut w = vec![0.0; design.columns.len()];
        let mut b = 0.0;
        let mut epochs_run = 0;
        let mut final_loss = f64::NAN;
        for _ in 0..config.max_epochs {
            let (loss, grad, grad_b) = objective(&design, &ys, &w, b, config.l2);
            final_loss = loss;
            let norm = (grad.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b).sqrt();
            if norm < config.tolerance {
                break;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= config.learning_rate * g;
            }
            b -= config.learning_rate * grad_b;
            epochs_run += 1;
        }
        let mut weights = vec![0.0; dims];
        for (c, &col) in design.columns.iter().enumerate() {
            weights[col] = w[c];
        }
        Ok(LinearClassifier {
            weights,
            bias: b,
            training_meta: TrainingMeta {
                config,
                epochs_run,
                final_loss,
            },
        })
    }

    pub fn dims(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    pub fn predict(&self, x: &FeatureVector) -> ClassLabel {
        if self.decision(x) > 0.0 {
            ClassLabel::Aligned
        } else {
            ClassLabel::Neutral
        }
    }

    pub fn accuracy(&self, xs: &[&FeatureVector], labels: &[ClassLabel]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::Invalid("accuracy over an empty set".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.dims() != self.dims()) {
            return Err(Error::Invalid(format!(
                "feature-space mismatch: classifier has {} dims, input has {}",
                self.dims(),
                x.dims()
            )));
        }
        let correct = xs
            .iter()
            .zip(labels)
            .filter(|(x, &l)| self.predict(x) == l)
            .count();
        Ok(correct as f64 / xs.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(v: &[f64]) -> FeatureVector {
        FeatureVector::Dense(v.to_vec())
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn learns_a_separable_problem() {
        let xs = [dense(&[1.0, 0.0]), dense(&[0.9, 0.1]), dense(&[0.0, 1.0]), dense(&[0.1, 0.8])];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let labels = [ClassLabel::Aligned, ClassLabel::Aligned, ClassLabel::Neutral, ClassLabel::Neutral];
        let clf = LinearClassifier::train(&refs, &labels, TrainConfig::default()).unwrap();
        assert_eq!(clf.accuracy(&refs, &labels).unwrap(), 1.0);
        assert!(clf.weights[0] > 0.0 && clf.weights[1] < 0.0);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let xs = [dense(&[0.3, 0.2, 0.0]), dense(&[0.0, 0.5, 0.7]), dense(&[0.9, 0.0, 0.1])];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let labels = [ClassLabel::Aligned, ClassLabel::Neutral, ClassLabel::Aligned];
        let a = LinearClassifier::train(&refs, &labels, TrainConfig::default()).unwrap();
        let b = LinearClassifier::train(&refs, &labels, TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compacted_training_matches_the_full_objective() {
        // Training only ever touches columns present in the data; the full
        // gradient at the trained point must agree on those columns.
        let xs = [
            FeatureVector::Sparse { dims: 16, entries: vec![(3, 0.6), (9, 0.8)] },
            FeatureVector::Sparse { dims: 16, entries: vec![(1, 1.0)] },
        ];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let labels = [ClassLabel::Aligned, ClassLabel::Neutral];
        let config = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
        let clf = LinearClassifier::train(&refs, &labels, config).unwrap();
        let (_, grad, _) = loss_and_gradient(&refs, &labels, &clf.weights, clf.bias, config.l2);
        for (i, g) in grad.iter().enumerate() {
            if ![1, 3, 9].contains(&i) {
                assert_eq!(*g, 0.0);
                assert_eq!(clf.weights[i], 0.0);
            }
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let xs = [dense(&[1.0, 0.0])];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let clf = LinearClassifier::train(&refs, &[ClassLabel::Aligned], TrainConfig::default()).unwrap();
        let other = dense(&[1.0, 0.0, 0.0]);
        assert!(clf.accuracy(&[&other], &[ClassLabel::Aligned]).is_err());
        assert!(LinearClassifier::train(&[], &[], TrainConfig::default()).is_err());
    }
}
