//! Run statistics and their CSV / JSON renderings, plus the cross-strategy
//! comparison used by the sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("cannot summarise an empty sample")]
    EmptySamples,
    #[error("label `{label}` was run on a different scenario family ({found} vs {expected})")]
    DigestMismatch {
        label: String,
        expected: String,
        found: String,
    },
    #[error("no reports for label `{0}`")]
    MissingLabel(String),
    #[error("malformed rd timeline at line {line}")]
    Timeline { line: usize },
}

/// Five-number summary, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantiles at positions `p * (n - 1)` of the sorted
/// sample.
pub fn quantiles(samples: &[f64]) -> Result<LatencySummary, ReportError> {
    if samples.is_empty() {
        return Err(ReportError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencySummary {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(samples: &[f64]) -> Option<f64> {
    quantiles(samples).ok().map(|s| s.median)
}

/// One directive application at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub time: SimTime,
    pub node: NodeId,
    pub rd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub created_data: u64,
    pub delivered_data: u64,
    pub delivery_ratio: f64,
    /// First-delivery latencies in delivery order.
    pub latencies_s: Vec<f64>,
    pub latency_summary: Option<LatencySummary>,
    /// Data insert attempts (creations and relays) across all buffers.
    pub data_store_attempts: u64,
    pub dropped_data: u64,
    pub dropped_control: u64,
    pub data_bytes_transferred: u64,
    pub control_bytes_transferred: u64,
    pub control_overhead: f64,
    pub rd_timeline: Vec<RdPoint>,
    /// Hash of the full scenario, strategy and seed included.
    pub scenario_digest: String,
    /// Hash of the scenario without strategy and seed; equal across the
    /// configurations of one comparison.
    pub family_digest: String,
}

impl RunReport {
    /// Share of data insert attempts that ended in a drop.
    pub fn data_drop_rate(&self) -> f64 {
        if self.data_store_attempts == 0 {
            0.0
        } else {
            self.dropped_data as f64 / self.data_store_attempts as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<RunReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let lat = |f: fn(&LatencySummary) -> f64| {
            self.latency_summary
                .as_ref()
                .map(|s| fmt_sig6(f(s)))
                .unwrap_or_default()
        };
        let row = [
            self.created_data.to_string(),
            self.delivered_data.to_string(),
            fmt_sig6(self.delivery_ratio),
            lat(|s| s.min),
            lat(|s| s.q1),
            lat(|s| s.median),
            lat(|s| s.q3),
            lat(|s| s.max),
            self.dropped_data.to_string(),
            self.dropped_control.to_string(),
            self.data_bytes_transferred.to_string(),
            self.control_bytes_transferred.to_string(),
            fmt_sig6(self.control_overhead),
            self.scenario_digest.clone(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
        out
    }
}

pub const CSV_HEADER: &str = "created_data,delivered_data,delivery_ratio,lat_min,lat_q1,lat_median,lat_q3,lat_max,dropped_data,dropped_control,data_bytes,control_bytes,control_overhead,scenario_digest";

/// `%.6g`-style formatting: six significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn rd_timeline_csv(points: &[RdPoint]) -> String {
    let mut out = String::from("time,node,rd\n");
    for p in points {
        writeln!(out, "{},{},{}", p.time, p.node, p.rd).unwrap();
    }
    out
}

pub fn parse_rd_timeline_csv(text: &str) -> Result<Vec<RdPoint>, ReportError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || ReportError::Timeline { line: i + 1 };
        let mut parts = line.split(',');
        let mut next = || parts.next().ok_or_else(bad);
        let time: f64 = next()?.parse().map_err(|_| bad())?;
        let node: u32 = next()?.parse().map_err(|_| bad())?;
        let rd: f64 = next()?.parse().map_err(|_| bad())?;
        points.push(RdPoint {
            time: SimTime::try_from_secs(time).ok_or_else(bad)?,
            node: NodeId(node),
            rd,
        });
    }
    Ok(points)
}

/// Per-label medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: String,
    pub runs: usize,
    pub median_delivery_ratio: f64,
    /// Median over runs of each run's median latency; `None` if no run
    /// delivered anything.
    pub median_latency: Option<f64>,
    pub median_overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub baseline: String,
    /// `100 * (target - baseline) / baseline`; `None` when the baseline
    /// delivered nothing.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub target: String,
    pub labels: Vec<LabelSummary>,
    pub improvements: Vec<Improvement>,
}

impl ComparisonTable {
    pub fn summary(&self, label: &str) -> Option<&LabelSummary> {
        self.labels.iter().find(|s| s.label == label)
    }

    pub fn improvement_over(&self, baseline: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.baseline == baseline)
            .and_then(|i| i.percent)
    }
}

/// Summarises each label and the delivery-ratio improvement of `target`
/// over every other label. All reports must share one scenario family.
pub fn compare(
    reports: &BTreeMap<String, Vec<RunReport>>,
    target: &str,
) -> Result<ComparisonTable, ReportError> {
    let mut family: Option<&str> = None;
    for (label, runs) in reports {
        for r in runs {
            match family {
                None => family = Some(&r.family_digest),
                Some(f) if f != r.family_digest => {
                    return Err(ReportError::DigestMismatch {
                        label: label.clone(),
                        expected: f.to_string(),
                        found: r.family_digest.clone(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    let labels: Vec<LabelSummary> = reports
        .iter()
        .map(|(label, runs)| summarise(label, runs))
        .collect::<Result<_, _>>()?;
    let target_summary = labels
        .iter()
        .find(|s| s.label == target)
        .ok_or_else(|| ReportError::MissingLabel(target.to_string()))?;
    let improvements = labels
        .iter()
        .filter(|s| s.label != target)
        .map(|base| Improvement {
            baseline: base.label.clone(),
            percent: percent_improvement(
                target_summary.median_delivery_ratio,
                base.median_delivery_ratio,
            ),
        })
        .collect();
    Ok(ComparisonTable {
        target: target.to_string(),
        labels,
        improvements,
    })
}

pub fn percent_improvement(target: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (target - baseline) / baseline)
}

fn summarise(label: &str, runs: &[RunReport]) -> Result<LabelSummary, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::MissingLabel(label.to_string()));
    }
    let ratios: Vec<f64> = runs.iter().map(|r| r.delivery_ratio).collect();
    let lats: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.latency_summary.map(|s| s.median))
        .collect();
    let overheads: Vec<f64> = runs.iter().map(|r| r.control_overhead).collect();
    Ok(LabelSummary {
        label: label.to_string(),
        runs: runs.len(),
        median_delivery_ratio: median(&ratios).expect("non-empty"),
        median_latency: median(&lats),
        median_overhead: median(&overheads).expect("non-empty"),
    })
}
