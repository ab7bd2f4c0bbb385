use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::RunManifest;
use crate::prompt_forge::Strategy;

pub const UNDEFINED_CELL: &str = "—";

/// One table row; metrics are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub method: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ReportRow {
    pub fn new(strategy: Strategy, accuracy: Option<f64>, precision: Option<f64>, recall: Option<f64>) -> Self {
        Self {
            strategy,
            method: strategy.display_name().to_string(),
            accuracy,
            precision,
            recall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Predicted class counts per method, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prediction_mix: BTreeMap<String, BTreeMap<String, u64>>,
}

/// Percentage with two decimals, or the undefined marker.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", (v * 10_000.0).round() / 100.0),
        None => UNDEFINED_CELL.to_string(),
    }
}

/// Rows in method order. Rows for the same method keep manifest order.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by_key(|r| r.strategy.index());
}

/// Aligned text table with the columns Method, Accuracy, Precision, Recall.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["Method", "Accuracy", "Precision", "Recall"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                format_percent(r.accuracy),
                format_percent(r.precision),
                format_percent(r.recall),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: [&str; 4]| -> String {
        let mut out = pad_right(cols[0], widths[0]);
        for (c, &w) in cols[1..].iter().zip(&widths[1..]) {
            out.push_str("  ");
            out.push_str(&pad_left(c, w));
        }
        out.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    for row in &cells {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
        out.push('\n');
    }
    out
}

fn pad_right(s: &str, width: usize) -> String {
    let n = s.chars().count();
    format!("{s}{}", " ".repeat(width.saturating_sub(n)))
}

fn pad_left(s: &str, width: usize) -> String {
    let n = s.chars().count();
    format!("{}{s}", " ".repeat(width.saturating_sub(n)))
}

pub fn report(manifests: &[RunManifest]) -> Report {
    let mut rows = Vec::new();
    let mut prediction_mix = BTreeMap::new();
    for m in manifests {
        for s in &m.strategies {
            rows.push(ReportRow::new(
                s.strategy,
                Some(s.metrics.accuracy),
                s.metrics.precision,
                s.metrics.recall,
            ));
            if !s.prediction_mix.is_empty() {
                prediction_mix.insert(s.strategy.display_name().to_string(), s.prediction_mix.clone());
            }
        }
    }
    sort_rows(&mut rows);
    Report { rows, prediction_mix }
}

impl Report {
    /// The metrics table followed by the prediction mix section, if any.
    pub fn to_text(&self) -> String {
        let mut out = render_table(&self.rows);
        if !self.prediction_mix.is_empty() {
            out.push_str("\nPredicted classes\n");
            let mut ordered: Vec<(&String, &BTreeMap<String, u64>)> = self.prediction_mix.iter().collect();
            ordered.sort_by_key(|(name, _)| {
                name.parse::<Strategy>().map(Strategy::index).unwrap_or(usize::MAX)
            });
            for (method, mix) in ordered {
                let parts: Vec<String> = mix.iter().map(|(k, v)| format!("{k}={v}")).collect();
                out.push_str(&format!("{method}: {}\n", parts.join(" ")));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
