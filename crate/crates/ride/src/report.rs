//! Table cells and delimited-text rendering.

use std::fmt::Write as _;

use ride_core::metrics::Metric;
use ride_core::SignificanceMarker;

use crate::config::{Contrast, CorrelationSpec, DeltaSummarySpec};

pub const MINUS: char = '\u{2212}';
pub const DEFAULT_DECIMALS: u32 = 3;

/// Rounds half away from zero to `decimals` places, returning the scaled
/// integer magnitude and whether the value is negative.
fn round_scaled(x: f64, decimals: u32) -> (u64, bool) {
    let scale = 10f64.powi(decimals as i32);
    ((x.abs() * scale).round() as u64, x < 0.0)
}

fn write_fixed(out: &mut String, magnitude: u64, decimals: u32) {
    let scale = 10u64.pow(decimals);
    let _ = write!(out, "{}", magnitude / scale);
    if decimals > 0 {
        let _ = write!(
            out,
            ".{:0width$}",
            magnitude % scale,
            width = decimals as usize
        );
    }
}

/// Fixed-point text for `x`. With `signed`, non-negative values (including
/// anything that rounds to zero) get a `+`; negatives always get `−`.
pub fn format_number(x: f64, decimals: u32, signed: bool) -> String {
    let (mag, negative) = round_scaled(x, decimals);
    let mut out = String::new();
    if negative && mag > 0 {
        out.push(MINUS);
    } else if signed {
        out.push('+');
    }
    write_fixed(&mut out, mag, decimals);
    out
}

/// `"<sign>0.ddd ± 0.ddd"` at three decimals.
pub fn format_cell(mean: f64, sem: f64, signed: bool) -> String {
    format_cell_with(mean, sem, signed, DEFAULT_DECIMALS)
}

pub fn format_cell_with(mean: f64, sem: f64, signed: bool, decimals: u32) -> String {
    format!(
        "{} \u{b1} {}",
        format_number(mean, decimals, signed),
        format_number(sem, decimals, false)
    )
}

/// Inverse of [`format_cell_with`]: the rounded mean and SEM a cell shows.
pub fn parse_cell(cell: &str) -> Option<(f64, f64)> {
    let (m, s) = cell.split_once(" \u{b1} ")?;
    Some((parse_number(m)?, parse_number(s)?))
}

pub fn parse_number(s: &str) -> Option<f64> {
    let (neg, rest) = if let Some(r) = s.strip_prefix(MINUS) {
        (true, r)
    } else if let Some(r) = s.strip_prefix('+') {
        (false, r)
    } else {
        (false, s)
    };
    if rest.starts_with(['+', '-', MINUS]) {
        return None;
    }
    let v: f64 = rest.parse().ok()?;
    Some(if neg { -v } else { v })
}

/// Rounds the way cells do, for comparing raw values against parsed cells.
pub fn round_half_away(x: f64, decimals: u32) -> f64 {
    let (mag, negative) = round_scaled(x, decimals);
    let v = mag as f64 / 10f64.powi(decimals as i32);
    if negative {
        -v
    } else {
        v
    }
}

/// Correlation cell: coefficient followed directly by its marker.
pub fn format_correlation(r: f64, marker: Option<SignificanceMarker>) -> String {
    let mut out = format_number(r, DEFAULT_DECIMALS, false);
    if let Some(m) = marker {
        out.push_str(m.as_str());
    }
    out
}

/// `1.3 × 10^-10` style for small p-values, fixed three decimals otherwise.
pub fn format_p(p: f64) -> String {
    if !p.is_finite() {
        return "NA".into();
    }
    if p == 0.0 {
        return "0".into();
    }
    if p >= 0.001 {
        return format!("{:.3}", p);
    }
    let s = format!("{:.1e}", p);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    format!("{mant} \u{d7} 10^{exp}")
}

/// Shortest text that reads back to the same `f64`; `NA` for undefined.
pub fn raw(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:?}"),
        None => "NA".into(),
    }
}

/// A rendered report table: one row per model, one column per contrast (or
/// contrast × metric).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub name: String,
    pub title: String,
    pub corner: String,
    pub column_labels: Vec<String>,
    pub row_labels: Vec<String>,
    /// `cells[row][col]`, already formatted.
    pub cells: Vec<Vec<String>>,
}

impl ReportTable {
    /// Tab-separated text with a `# title` line on top.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        out.push_str(&self.corner);
        for c in &self.column_labels {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            out.push_str(label);
            for c in row {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }
}

/// Summary behind one `mean ± SEM` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCell {
    pub model: String,
    pub contrast: Contrast,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub marker: Option<SignificanceMarker>,
}

/// Summary behind one correlation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCell {
    pub model: String,
    pub contrast: Contrast,
    pub r: Option<f64>,
    /// Raw p-value, shown when the table asks for a p column.
    pub p: Option<f64>,
    pub marker: Option<SignificanceMarker>,
}

/// Rows are models; columns are contrasts, or contrast × metric when the
/// table lists several metrics. Markers are appended only when the table
/// asks for them.
pub fn render_delta_table(
    spec: &DeltaSummarySpec,
    contrasts: &[Contrast],
    decimals: u32,
    models: &[&str],
    cells: &[DeltaCell],
) -> ReportTable {
    let several = spec.metrics.len() > 1;
    let mut column_labels = Vec::new();
    for c in contrasts {
        for m in &spec.metrics {
            column_labels.push(if several {
                format!("{} {}", c.label(), m.name())
            } else {
                c.label()
            });
        }
    }
    let rows = models
        .iter()
        .map(|&model| {
            let mut row = Vec::new();
            for &c in contrasts {
                for &m in &spec.metrics {
                    let cell = cells
                        .iter()
                        .find(|x| x.model == model && x.contrast == c && x.metric == m);
                    row.push(match cell {
                        Some(DeltaCell {
                            mean: Some(mean),
                            sem: Some(sem),
                            marker,
                            ..
                        }) => {
                            let mut s = format_cell_with(*mean, *sem, spec.signed, decimals);
                            if spec.markers {
                                if let Some(mk) = marker {
                                    s.push_str(mk.as_str());
                                }
                            }
                            s
                        }
                        _ => "NA".into(),
                    });
                }
            }
            row
        })
        .collect();
    ReportTable {
        name: spec.name.clone(),
        title: spec.title.clone(),
        corner: "Model".into(),
        column_labels,
        row_labels: models.iter().map(|m| m.to_string()).collect(),
        cells: rows,
    }
}

/// Rows are models; one coefficient column per contrast, each followed by
/// a raw p column when `show_p` is set.
pub fn render_correlation_table(
    spec: &CorrelationSpec,
    contrasts: &[Contrast],
    models: &[&str],
    cells: &[CorrelationCell],
) -> ReportTable {
    let mut column_labels = Vec::new();
    for c in contrasts {
        column_labels.push(c.label());
        if spec.show_p {
            column_labels.push(format!("{} p", c.label()));
        }
    }
    let rows = models
        .iter()
        .map(|&model| {
            let mut row = Vec::new();
            for &c in contrasts {
                let cell = cells.iter().find(|x| x.model == model && x.contrast == c);
                row.push(match cell.and_then(|x| x.r.map(|r| (r, x.marker))) {
                    Some((r, marker)) => format_correlation(r, marker),
                    None => "NA".into(),
                });
                if spec.show_p {
                    row.push(cell.and_then(|x| x.p).map_or_else(|| "NA".into(), format_p));
                }
            }
            row
        })
        .collect();
    ReportTable {
        name: spec.name.clone(),
        title: spec.title.clone(),
        corner: "Model".into(),
        column_labels,
        row_labels: models.iter().map(|m| m.to_string()).collect(),
        cells: rows,
    }
}

/// Joins fields with tabs, one record per line.
pub fn tsv_line(fields: &[String]) -> String {
    let mut s = fields.join("\t");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells() {
        assert_eq!(
            format_cell(-0.0154, 0.00049, true),
            "\u{2212}0.015 \u{b1} 0.000"
        );
        assert_eq!(format_cell(0.0125, 0.0004, true), "+0.013 \u{b1} 0.000");
        assert_eq!(format_cell(0.0, 0.0, true), "+0.000 \u{b1} 0.000");
        assert_eq!(format_cell(-0.0004, 0.0, true), "+0.000 \u{b1} 0.000");
        assert_eq!(format_cell(0.2, 0.01, false), "0.200 \u{b1} 0.010");
        assert_eq!(
            format_cell_with(-0.03891, 0.00312, true, 4),
            "\u{2212}0.0389 \u{b1} 0.0031"
        );
    }

    #[test]
    fn p_values() {
        assert_eq!(format_p(1.3e-10), "1.3 \u{d7} 10^-10");
        assert_eq!(format_p(0.0213), "0.021");
    }

    #[test]
    fn parse_round_trip() {
        let (m, s) = parse_cell("\u{2212}0.015 \u{b1} 0.000").unwrap();
        assert_eq!((m, s), (-0.015, 0.0));
        assert_eq!(parse_cell("+0.013 \u{b1} 0.000"), Some((0.013, 0.0)));
        assert_eq!(parse_cell("garbage"), None);
    }
}
