//! Hand-written SVG heatmaps for square model-by-model matrices.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::LabeledMatrix;

/// Nine-step diverging palette, lowest step first (blue to red).
pub const PALETTE: [&str; 9] = [
    "#2166ac", "#4393c3", "#92c5de", "#d1e5f0", "#f7f7f7", "#fddbc7", "#f4a582", "#d6604d", "#b2182b",
];

pub const EMPTY_FILL: &str = "#e0e0e0";

const CELL: usize = 64;
const LEFT: usize = 150;
const TOP: usize = 70;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapOptions {
    pub title: String,
    /// Extra lines placed in the document's `<desc>`, e.g. the seed.
    pub description: Vec<String>,
    pub decimals: usize,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        HeatmapOptions {
            title: String::new(),
            description: Vec::new(),
            decimals: 2,
        }
    }
}

/// Palette index of `v` on a linear scale from `min` to `max`. A flat
/// matrix maps everything to the top step.
pub fn palette_step(v: f64, min: f64, max: f64) -> usize {
    if max <= min {
        return PALETTE.len() - 1;
    }
    let t = (v - min) / (max - min);
    ((t * PALETTE.len() as f64).floor() as usize).min(PALETTE.len() - 1)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders `matrix` as a heatmap with value labels and a min/max legend.
/// Output bytes depend only on the inputs.
pub fn render_heatmap(matrix: &LabeledMatrix, options: &HeatmapOptions) -> Result<String> {
    if !matrix.is_square() || matrix.rows() == 0 {
        return Err(Error::Invalid(format!(
            "heatmap needs a non-empty square matrix, got {}x{}",
            matrix.rows(),
            matrix.cols()
        )));
    }
    if matrix.row_labels != matrix.col_labels {
        return Err(Error::Invalid("heatmap row and column labels differ".into()));
    }
    let k = matrix.rows();
    let (min, max) = matrix
        .values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let has_values = min.is_finite();
    let width = LEFT + k * CELL + 20;
    let height = TOP + k * CELL + 70;
    let fmt = |v: f64| format!("{v:.*}", options.decimals);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&options.title));
    if !options.description.is_empty() {
        let _ = writeln!(s, "<desc>{}</desc>", escape(&options.description.join("; ")));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2,
        escape(&options.title)
    );
    for (j, label) in matrix.col_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            LEFT + j * CELL + CELL / 2,
            TOP - 8,
            escape(label)
        );
    }
    for (i, label) in matrix.row_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 8,
            TOP + i * CELL + CELL / 2 + 4,
            escape(label)
        );
    }
    for i in 0..k {
        for j in 0..k {
            let (x, y) = (LEFT + j * CELL, TOP + i * CELL);
            let value = matrix.get(i, j);
            let fill = match value {
                Some(v) => PALETTE[palette_step(v, min, max)],
                None => EMPTY_FILL,
            };
            let _ = writeln!(
                s,
                r#"<rect class="cell" data-row="{i}" data-col="{j}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="white"/>"#
            );
            let text = value.map_or_else(|| "n/a".to_string(), fmt);
            let _ = writeln!(
                s,
                r#"<text class="value" data-row="{i}" data-col="{j}" x="{}" y="{}" font-size="12" text-anchor="middle">{text}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }

    let legend_y = TOP + k * CELL + 20;
    let step_w = (k * CELL) as f64 / PALETTE.len() as f64;
    for (n, color) in PALETTE.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{:.1}" y="{legend_y}" width="{:.1}" height="12" fill="{color}"/>"#,
            LEFT as f64 + n as f64 * step_w,
            step_w
        );
    }
    let (lo, hi) = if has_values { (fmt(min), fmt(max)) } else { ("n/a".into(), "n/a".into()) };
    let _ = writeln!(
        s,
        r#"<text class="scale-min" x="{LEFT}" y="{}" font-size="11" text-anchor="start">min {lo}</text>"#,
        legend_y + 28
    );
    let _ = writeln!(
        s,
        r#"<text class="scale-max" x="{}" y="{}" font-size="11" text-anchor="end">max {hi}</text>"#,
        LEFT + k * CELL,
        legend_y + 28
    );
    s.push_str("</svg>\n");
    Ok(s)
}
