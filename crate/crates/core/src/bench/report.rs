use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{quality, rates, QualityMetrics, Rates};
use super::runner::EpisodeResult;
use super::Condition;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub model: String,
    pub condition: Condition,
    pub episodes: usize,
    pub rates: Rates,
    pub metrics: QualityMetrics,
}

impl BenchmarkReport {
    pub fn from_results(model: &str, condition: Condition, results: &[EpisodeResult]) -> Result<Self> {
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.to_string(),
            condition,
            episodes: results.len(),
            rates: rates(results)?,
            metrics: quality(results)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: r.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(r)
    }
}

const HEADER: [&str; 14] = [
    "condition", "model", "N", "SR", "PR", "TR", "LR", "CR", "ego_jerk", "other_jerk", "dev_wp", "dev_dest", "head_dev",
    "steps",
];

/// Fixed-width table, one row per report. Rates are percentages with one
/// decimal, metrics have three decimals.
pub fn render_report(reports: &[BenchmarkReport]) -> Result<String> {
    let mut rows = vec![HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in reports {
        if r.model.trim().is_empty() {
            return Err(Error::Config("report has an empty model tag".into()));
        }
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let m = &r.metrics;
        rows.push(vec![
            r.condition.code().to_string(),
            r.model.clone(),
            r.episodes.to_string(),
            pct(r.rates.sr),
            pct(r.rates.pr),
            pct(r.rates.tr),
            pct(r.rates.lr),
            pct(r.rates.cr),
            format!("{:.3}", m.ego_jerk),
            format!("{:.3}", m.other_jerk),
            format!("{:.3}", m.dev_waypoint),
            format!("{:.3}", m.dev_destination),
            format!("{:.3}", m.heading_dev),
            format!("{:.3}", m.total_steps),
        ]);
    }
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).expect("write to string");
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            writeln!(out, "{}", "-".repeat(total)).expect("write to string");
        }
    }
    Ok(out)
}
