//! CSV and JSONL reports with a reproducibility header.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::pipeline::{Aggregate, HiddenProgressFlag, Metric, MetricRecord, RunSummary};
use crate::trajmodel::fmt_f64;

pub const REPORT_FORMAT: &str = "koopctl-report-v1";
pub const TOOL_NAME: &str = "koopctl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json" => Ok(Self::Jsonl),
            _ => Err(format!("unknown report format {s:?}; expected csv or jsonl")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            path: path.into(),
            sha256: sha256_hex(bytes),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Tool version, resolved settings and input digests of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproHeader {
    pub format: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

impl ReproHeader {
    pub fn new(command: impl Into<String>, config: serde_json::Value, inputs: Vec<InputDigest>) -> Self {
        Self {
            format: REPORT_FORMAT,
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command: command.into(),
            config,
            inputs,
        }
    }

    /// The header as one JSON line (no trailing newline).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct SummaryLine {
    checkpoint: u64,
    records: usize,
    gate_failures: usize,
    median_reward: Option<Aggregate>,
    max_eig_norm: Option<Aggregate>,
    normalized_ctrb_rank: Option<Aggregate>,
}

fn summary_lines(summary: &RunSummary) -> impl Iterator<Item = SummaryLine> + '_ {
    summary.checkpoints.iter().map(|c| SummaryLine {
        checkpoint: c.checkpoint,
        records: c.records,
        gate_failures: c.gate_failures,
        median_reward: c.aggregate(Metric::MedianReward),
        max_eig_norm: c.aggregate(Metric::MaxEigNorm),
        normalized_ctrb_rank: c.aggregate(Metric::NormalizedCtrbRank),
    })
}

pub const RECORD_COLUMNS: [&str; 9] = [
    "checkpoint",
    "seed",
    "max_eig_norm",
    "normalized_ctrb_rank",
    "reduced_rank_r",
    "mse_one_step",
    "passed_gate",
    "median_reward",
    "trial_count",
];

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "checkpoint",
    "records",
    "gate_failures",
    "median_reward_mean",
    "median_reward_se",
    "max_eig_norm_mean",
    "max_eig_norm_se",
    "normalized_ctrb_rank_mean",
    "normalized_ctrb_rank_se",
];

pub const FLAG_COLUMNS: [&str; 7] = [
    "start_checkpoint",
    "end_checkpoint",
    "reward_slope",
    "metric",
    "direction",
    "slope",
    "t_stat",
];

fn csv_f64(out: &mut String, v: f64) {
    if v.is_finite() {
        fmt_f64(out, v);
    } else if v.is_nan() {
        out.push_str("nan");
    } else if v > 0.0 {
        out.push_str("inf");
    } else {
        out.push_str("-inf");
    }
}

fn csv_aggregate(out: &mut String, a: Option<Aggregate>) {
    if let Some(a) = a {
        csv_f64(out, a.mean);
        out.push(',');
        csv_f64(out, a.se);
    } else {
        out.push(',');
    }
}

/// Renders records, the per-checkpoint summary and flagged windows.
///
/// CSV: a `# `-prefixed JSON header line, then three sections (records,
/// `# summary`, `# hidden_progress`) each with its own column row. Null
/// aggregates are empty cells. JSONL: the header object, then one object
/// per record, summary row and flag, tagged by `"kind"`.
pub fn emit_report(
    header: &ReproHeader,
    records: &[MetricRecord],
    summary: &RunSummary,
    flags: &[HiddenProgressFlag],
    format: ReportFormat,
) -> Vec<u8> {
    let mut out = String::new();
    match format {
        ReportFormat::Jsonl => {
            out.push_str(&header.to_json());
            out.push('\n');
            let mut line = |v: String| {
                out.push_str(&v);
                out.push('\n');
            };
            for r in records {
                line(serde_json::to_string(&Tagged { kind: "record", body: r }).expect("serializable"));
            }
            for s in summary_lines(summary) {
                line(serde_json::to_string(&Tagged { kind: "summary", body: &s }).expect("serializable"));
            }
            for f in flags {
                line(serde_json::to_string(&Tagged { kind: "flag", body: f }).expect("serializable"));
            }
        }
        ReportFormat::Csv => {
            out.push_str("# ");
            out.push_str(&header.to_json());
            out.push('\n');
            out.push_str(&RECORD_COLUMNS.join(","));
            out.push('\n');
            for r in records {
                let _ = write!(out, "{},{},", r.checkpoint, r.seed);
                csv_f64(&mut out, r.max_eig_norm);
                out.push(',');
                csv_f64(&mut out, r.normalized_ctrb_rank);
                let _ = write!(out, ",{},", r.reduced_rank_r);
                csv_f64(&mut out, r.mse_one_step);
                let _ = write!(out, ",{},", r.passed_gate);
                csv_f64(&mut out, r.median_reward);
                let _ = writeln!(out, ",{}", r.trial_count);
            }
            out.push_str("\n# summary\n");
            out.push_str(&SUMMARY_COLUMNS.join(","));
            out.push('\n');
            for s in summary_lines(summary) {
                let _ = write!(out, "{},{},{},", s.checkpoint, s.records, s.gate_failures);
                csv_aggregate(&mut out, s.median_reward);
                out.push(',');
                csv_aggregate(&mut out, s.max_eig_norm);
                out.push(',');
                csv_aggregate(&mut out, s.normalized_ctrb_rank);
                out.push('\n');
            }
            out.push_str("\n# hidden_progress\n");
            out.push_str(&FLAG_COLUMNS.join(","));
            out.push('\n');
            for f in flags {
                for t in &f.triggers {
                    let _ = write!(out, "{},{},", f.start_checkpoint, f.end_checkpoint);
                    csv_f64(&mut out, f.reward_slope);
                    let _ = write!(out, ",{},{},", t.metric.name(), direction_name(t.direction));
                    csv_f64(&mut out, t.slope);
                    out.push(',');
                    csv_f64(&mut out, t.t_stat);
                    out.push('\n');
                }
            }
        }
    }
    out.into_bytes()
}

fn direction_name(d: crate::pipeline::Direction) -> &'static str {
    match d {
        crate::pipeline::Direction::Increasing => "increasing",
        crate::pipeline::Direction::Decreasing => "decreasing",
    }
}
