//! Markdown renderings of the audit tables. Percentages carry two decimals.

use std::fmt::Write as _;

use crate::corpus::TopicStats;
use crate::lexicon::BiasTable;
use crate::monoculture::{ConsistencyIndex, TransferMatrix};
use crate::separability::polarization::{format_pct, lean_marker};
use crate::separability::{PolarizationReport, SeparabilityResult};
use crate::summarygen::LengthRow;

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn header(cells: &[&str]) -> String {
    let owned: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
    let rule: Vec<String> = cells.iter().map(|_| "---".to_string()).collect();
    row(&owned) + &row(&rule)
}

fn words(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |v| format!("{v:.2}"))
}

pub fn stats_table(stats: &[TopicStats]) -> String {
    let mut s = header(&["Topic", "Articles", "Words/article", "Sentences/article"]);
    for t in stats {
        s += &row(&[
            t.label.clone(),
            t.article_count.to_string(),
            format!("{:.2}", t.mean_words_per_article),
            format!("{:.2}", t.mean_sentences_per_article),
        ]);
    }
    s
}

pub fn length_table(rows: &[LengthRow]) -> String {
    let mut s = header(&["Model", "Democrat", "Republican", "Neutral", "Aggregate"]);
    for r in rows {
        s += &row(&[
            r.model_id.clone(),
            words(r.democrat),
            words(r.republican),
            words(r.neutral),
            words(r.aggregate),
        ]);
    }
    s
}

/// One row per (topic, model) with both top lists.
pub fn top_tokens_table(tables: &[(String, String, &BiasTable)]) -> String {
    let mut s = header(&["Topic", "Model", "Democrat-leaning", "Republican-leaning"]);
    for (topic, model, t) in tables {
        s += &row(&[topic.clone(), model.clone(), t.top_dem.join(", "), t.top_rep.join(", ")]);
    }
    s
}

pub fn separability_table(results: &[SeparabilityResult]) -> String {
    let mut s = header(&["Topic", "Model", "Contrast", "Accuracy (%)"]);
    for r in results {
        s += &row(&[
            r.topic.clone(),
            r.model_id.clone(),
            r.contrast.to_string(),
            format_pct(100.0 * r.mean_accuracy),
        ]);
    }
    s
}

fn p_cell(v: Option<f64>, bold: bool) -> String {
    match v {
        None => "missing".to_string(),
        Some(v) => {
            let marker = lean_marker(v);
            let text = if marker.is_empty() {
                format_pct(v)
            } else {
                format!("{} {marker}", format_pct(v))
            };
            if bold {
                format!("**{text}**")
            } else {
                text
            }
        }
    }
}

/// The polarization grid with a mean column and an average row. The
/// largest-magnitude cell of every column is bold.
pub fn polarization_table(report: &PolarizationReport) -> String {
    let mut cols = vec!["Topic".to_string()];
    cols.extend(report.models.iter().cloned());
    cols.push("Mean".into());
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut s = header(&col_refs);
    for (t, topic) in report.topics.iter().enumerate() {
        let mut cells = vec![topic.clone()];
        for (m, v) in report.cells[t].iter().enumerate() {
            cells.push(p_cell(*v, report.model_extreme_rows[m] == Some(t)));
        }
        cells.push(p_cell(report.topic_summary[t].mean, report.mean_extreme_row == Some(t)));
        s += &row(&cells);
    }
    let mut avg = vec!["Average".to_string()];
    avg.extend(report.model_means.iter().map(|v| p_cell(*v, false)));
    avg.push(p_cell(report.overall_mean, false));
    s += &row(&avg);
    s
}

pub fn topic_summary_table(report: &PolarizationReport) -> String {
    let mut s = header(&["Topic", "Mean", "Max magnitude"]);
    for t in &report.topic_summary {
        s += &row(&[t.topic.clone(), p_cell(t.mean, false), p_cell(t.max_magnitude, false)]);
    }
    s
}

pub fn consistency_summary(ci: &ConsistencyIndex) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "- {} top-{} overlap: overall mean {}%, off-diagonal mean {}%",
        ci.overlap.ideology.as_str(),
        ci.overlap.n,
        format_pct(ci.overall_mean),
        format_pct(ci.off_diagonal_mean)
    );
    s
}

pub fn transfer_summary(tm: &TransferMatrix) -> String {
    format!(
        "- {}: diagonal mean {}%, off-diagonal mean {}%\n",
        tm.contrast,
        format_pct(100.0 * tm.diagonal_mean),
        format_pct(100.0 * tm.off_diagonal_mean)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn extreme_cells_are_bold_and_signed() {
        let topics = vec!["a".to_string(), "b".to_string()];
        let models = vec!["x".to_string(), "y".to_string()];
        let mut v = BTreeMap::new();
        v.insert(("a".to_string(), "x".to_string()), -4.3);
        v.insert(("b".to_string(), "x".to_string()), -1.0);
        v.insert(("a".to_string(), "y".to_string()), 0.5);
        v.insert(("b".to_string(), "y".to_string()), 1.33);
        let rep = PolarizationReport::from_cells(&topics, &models, &v, false).unwrap();
        let md = polarization_table(&rep);
        assert!(md.contains("| a | **-4.30 D** | 0.50 R | **-1.90 D** |"));
        assert!(md.contains("| b | -1.00 D | **1.33 R** | 0.17 R |"));
        assert!(md.contains("| Average | -2.65 D | 0.92 R | -0.87 D |"));
    }
}
