//! Polarization index and its (topic x model) report.
//!
//! P = 100 * (diff_dem - diff_rep) in percentage points. Negative P means the
//! neutral summaries are harder to tell apart from the Democrat-aligned ones,
//! i.e. they lean Democratic; positive P leans Republican.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Contrast, SeparabilityResult};
use crate::error::{Error, Result};

pub fn polarization(diff_dem: &SeparabilityResult, diff_rep: &SeparabilityResult) -> Result<f64> {
    if diff_dem.topic != diff_rep.topic || diff_dem.model_id != diff_rep.model_id {
        return Err(Error::Invalid(format!(
            "cannot combine ({}, {}) with ({}, {})",
            diff_dem.topic, diff_dem.model_id, diff_rep.topic, diff_rep.model_id
        )));
    }
    Ok(100.0 * (diff_dem.mean_accuracy - diff_rep.mean_accuracy))
}

/// The value with the largest magnitude; the earliest wins ties.
pub fn max_magnitude<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    values.into_iter().fold(None, |best, v| match best {
        Some(b) if b.abs() >= v.abs() => Some(b),
        _ => Some(v),
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: String,
    pub mean: Option<f64>,
    pub max_magnitude: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationReport {
    pub topics: Vec<String>,
    pub models: Vec<String>,
    /// `cells[t][m]`, `None` where the cell is missing.
    pub cells: Vec<Vec<Option<f64>>>,
    pub missing: Vec<(String, String)>,
    /// Per-topic mean over models and max-magnitude cell.
    pub topic_summary: Vec<TopicSummary>,
    /// Per-model mean over topics.
    pub model_means: Vec<Option<f64>>,
    pub overall_mean: Option<f64>,
    /// Row index of the max-magnitude cell in each model column.
    pub model_extreme_rows: Vec<Option<usize>>,
    /// Row index of the max-magnitude topic mean.
    pub mean_extreme_row: Option<usize>,
}

impl PolarizationReport {
    /// Builds the report from P values keyed by (topic, model). Missing
    /// cells are an error unless `allow_missing` is set, in which case they
    /// are listed and left out of every mean.
    pub fn from_cells(
        topics: &[String],
        models: &[String],
        values: &BTreeMap<(String, String), f64>,
        allow_missing: bool,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(topics.len());
        let mut missing = Vec::new();
        for t in topics {
            let row: Vec<Option<f64>> = models
                .iter()
                .map(|m| {
                    let v = values.get(&(t.clone(), m.clone())).copied();
                    if v.is_none() {
                        missing.push((t.clone(), m.clone()));
                    }
                    v
                })
                .collect();
            cells.push(row);
        }
        if !missing.is_empty() && !allow_missing {
            let list: Vec<String> = missing.iter().map(|(t, m)| format!("({t}, {m})")).collect();
            return Err(Error::MissingData(format!(
                "polarization cells missing: {}",
                list.join(", ")
            )));
        }
        Ok(Self::summarize(topics.to_vec(), models.to_vec(), cells, missing))
    }

    fn summarize(
        topics: Vec<String>,
        models: Vec<String>,
        cells: Vec<Vec<Option<f64>>>,
        missing: Vec<(String, String)>,
    ) -> Self {
        let topic_summary: Vec<TopicSummary> = topics
            .iter()
            .zip(&cells)
            .map(|(t, row)| {
                let present: Vec<f64> = row.iter().flatten().copied().collect();
                TopicSummary {
                    topic: t.clone(),
                    mean: mean(&present),
                    max_magnitude: max_magnitude(present),
                }
            })
            .collect();
        let column = |m: usize| cells.iter().map(move |row| row[m]);
        let model_means = (0..models.len())
            .map(|m| mean(&column(m).flatten().collect::<Vec<_>>()))
            .collect();
        let model_extreme_rows = (0..models.len())
            .map(|m| extreme_row(column(m)))
            .collect();
        let all: Vec<f64> = cells.iter().flatten().flatten().copied().collect();
        let mean_extreme_row = extreme_row(topic_summary.iter().map(|s| s.mean));
        PolarizationReport {
            topics,
            models,
            cells,
            missing,
            topic_summary,
            model_means,
            overall_mean: mean(&all),
            model_extreme_rows,
            mean_extreme_row,
        }
    }

    pub fn cell(&self, topic: &str, model: &str) -> Option<f64> {
        let t = self.topics.iter().position(|x| x == topic)?;
        let m = self.models.iter().position(|x| x == model)?;
        self.cells[t][m]
    }

    /// Re-derives the per-topic mean and max-magnitude table from the grid
    /// and checks it against the stored one.
    pub fn verify_topic_summary(&self) -> Result<()> {
        let rebuilt = Self::summarize(
            self.topics.clone(),
            self.models.clone(),
            self.cells.clone(),
            self.missing.clone(),
        );
        if rebuilt.topic_summary != self.topic_summary {
            return Err(Error::Invalid(
                "per-topic summary is inconsistent with the polarization grid".into(),
            ));
        }
        Ok(())
    }
}

fn extreme_row<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        let Some(v) = v else { continue };
        if best.is_none_or(|(_, b)| v.abs() > b.abs()) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Pairs Democrat and Republican results per (topic, model) into a report.
pub fn polarization_report(
    results: &[SeparabilityResult],
    topics: &[String],
    models: &[String],
    allow_missing: bool,
) -> Result<PolarizationReport> {
    let mut dem: BTreeMap<(String, String), &SeparabilityResult> = BTreeMap::new();
    let mut rep: BTreeMap<(String, String), &SeparabilityResult> = BTreeMap::new();
    for r in results {
        let key = (r.topic.clone(), r.model_id.clone());
        let slot = match r.contrast {
            Contrast::NeutralVsDemocrat => &mut dem,
            Contrast::NeutralVsRepublican => &mut rep,
        };
        if slot.insert(key, r).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate {} result for ({}, {})",
                r.contrast, r.topic, r.model_id
            )));
        }
    }
    let mut values = BTreeMap::new();
    for (key, d) in &dem {
        if let Some(r) = rep.get(key) {
            values.insert(key.clone(), polarization(d, r)?);
        }
    }
    PolarizationReport::from_cells(topics, models, &values, allow_missing)
}

/// Two-decimal rendering; values that round to zero print as `0.00`.
pub fn format_pct(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// Sign annotation: `D` for negative P, `R` for positive, empty at zero.
pub fn lean_marker(p: f64) -> &'static str {
    if format_pct(p) == "0.00" {
        ""
    } else if p < 0.0 {
        "D"
    } else {
        "R"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(topic: &str, model: &str, contrast: Contrast, acc: f64) -> SeparabilityResult {
        SeparabilityResult {
            topic: topic.into(),
            model_id: model.into(),
            contrast,
            fold_accuracies: vec![acc; 5],
            mean_accuracy: acc,
            class_counts: (10, 10),
            seed: 0,
        }
    }

    #[test]
    fn p_is_a_scaled_difference() {
        let d = result("t", "m", Contrast::NeutralVsDemocrat, 0.55);
        let r = result("t", "m", Contrast::NeutralVsRepublican, 0.55);
        assert_eq!(polarization(&d, &r).unwrap(), 0.0);
        let d = result("t", "m", Contrast::NeutralVsDemocrat, 0.60);
        let r = result("t", "m", Contrast::NeutralVsRepublican, 0.65);
        assert!((polarization(&d, &r).unwrap() + 5.0).abs() < 1e-9);
        assert!((polarization(&r, &d).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_cells_rejected() {
        let d = result("t", "m", Contrast::NeutralVsDemocrat, 0.6);
        let r = result("u", "m", Contrast::NeutralVsRepublican, 0.6);
        assert!(polarization(&d, &r).is_err());
    }

    #[test]
    fn all_zero_grid() {
        let topics = vec!["a".to_string(), "b".to_string()];
        let models = vec!["x".to_string(), "y".to_string()];
        let mut values = BTreeMap::new();
        for t in &topics {
            for m in &models {
                values.insert((t.clone(), m.clone()), 0.0);
            }
        }
        let rep = PolarizationReport::from_cells(&topics, &models, &values, false).unwrap();
        assert!(rep.topic_summary.iter().all(|s| s.mean == Some(0.0) && s.max_magnitude == Some(0.0)));
        assert!(rep.model_means.iter().all(|m| *m == Some(0.0)));
        rep.verify_topic_summary().unwrap();
    }

    #[test]
    fn missing_cells_listed() {
        let topics = vec!["a".to_string()];
        let models = vec!["x".to_string(), "y".to_string()];
        let mut values = BTreeMap::new();
        values.insert(("a".to_string(), "x".to_string()), -1.0);
        let err = PolarizationReport::from_cells(&topics, &models, &values, false).unwrap_err();
        assert!(err.to_string().contains("(a, y)"));
        let rep = PolarizationReport::from_cells(&topics, &models, &values, true).unwrap();
        assert_eq!(rep.missing, vec![("a".to_string(), "y".to_string())]);
        assert_eq!(rep.topic_summary[0].mean, Some(-1.0));
        assert_eq!(rep.model_means[1], None);
    }

    #[test]
    fn report_from_results() {
        let results = vec![
            result("t", "m", Contrast::NeutralVsDemocrat, 0.60),
            result("t", "m", Contrast::NeutralVsRepublican, 0.65),
        ];
        let rep = polarization_report(&results, &["t".into()], &["m".into()], false).unwrap();
        assert!((rep.cell("t", "m").unwrap() + 5.0).abs() < 1e-9);
        let dup = vec![results[0].clone(), results[0].clone()];
        assert!(polarization_report(&dup, &["t".into()], &["m".into()], false).is_err());
    }

    #[test]
    fn formatting() {
        assert_eq!(format_pct(-4.3), "-4.30");
        assert_eq!(format_pct(-0.001), "0.00");
        assert_eq!(lean_marker(-2.0), "D");
        assert_eq!(lean_marker(1.33), "R");
        assert_eq!(lean_marker(0.0), "");
        assert_eq!(max_magnitude([1.33, -0.96, 0.75]), Some(1.33));
        assert_eq!(max_magnitude([2.0, -2.0]), Some(2.0));
        assert_eq!(max_magnitude(std::iter::empty()), None);
    }
}
