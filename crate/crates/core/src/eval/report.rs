//! Metrics reports as JSON and as an aligned text table.

use serde::{Deserialize, Serialize};

use super::{compare_proportions, compare_samples, BenchmarkMetrics, EpisodeRecord};
use crate::env::Outcome;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub metrics: BenchmarkMetrics,
    /// p-values against the first row; absent for the first row itself
    /// or when a test has too few samples.
    pub p_success: Option<f64>,
    pub p_duration: Option<f64>,
    pub p_path_ratio: Option<f64>,
}

impl MetricsRow {
    pub fn new(name: impl Into<String>, records: &[EpisodeRecord]) -> Result<Self> {
        Ok(MetricsRow {
            name: name.into(),
            metrics: super::compute_metrics(records)?,
            p_success: None,
            p_duration: None,
            p_path_ratio: None,
        })
    }

    /// Fills the p-values of `self` against `baseline`.
    pub fn compare_to(&mut self, own: &[EpisodeRecord], baseline: &[EpisodeRecord]) -> Result<()> {
        let b = super::compute_metrics(baseline)?;
        let m = &self.metrics;
        self.p_success = Some(compare_proportions(
            m.n_success as u64,
            m.n_episodes as u64,
            b.n_success as u64,
            b.n_episodes as u64,
        )?);
        let durations = |rs: &[EpisodeRecord]| -> Vec<f64> {
            rs.iter().filter(|r| r.outcome == Outcome::Success).map(|r| r.duration).collect()
        };
        let ratios = |rs: &[EpisodeRecord]| -> Vec<f64> {
            rs.iter().filter(|r| r.outcome != Outcome::Success).map(|r| r.path_ratio()).collect()
        };
        self.p_duration = compare_samples(&durations(own), &durations(baseline)).ok();
        self.p_path_ratio = compare_samples(&ratios(own), &ratios(baseline)).ok();
        Ok(())
    }
}

pub fn metrics_json(rows: &[MetricsRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("metrics serialise");
    s.push('\n');
    s
}

pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map(f).unwrap_or_else(|| "-".into());
    let header = ["run", "success", "duration [s]", "path ratio [%]", "p success", "p duration", "p path ratio"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            [
                r.name.clone(),
                format!("{}/{}", m.n_success, m.n_episodes),
                opt(m.duration, &|d| format!("{d:.1}")),
                opt(m.path_ratio, &|p| format!("{:.1}", 100.0 * p)),
                opt(r.p_success, &|p| format!("{p:.3}")),
                opt(r.p_duration, &|p| format!("{p:.3}")),
                opt(r.p_path_ratio, &|p| format!("{p:.3}")),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let row: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(row.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
