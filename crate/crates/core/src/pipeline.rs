//! Per-checkpoint fits, cross-seed aggregation and hidden-progress
//! detection.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError, HpConfig};
use crate::dmdc::{fit_dmdc_with, reconstruction_mse, DmdcError};
use crate::embed::{build_snapshots, EmbedError};
use crate::specmetrics::{normalized_ctrb_rank, spectrum, MetricsError};
use crate::trajmodel::TrajectorySet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("trajectory set mixes (checkpoint, seed) tags {0:?} and {1:?}")]
    MixedTags((u64, u64), (u64, u64)),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Fit(#[from] DmdcError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no metric records to summarize")]
    NoRecords,
    #[error("need at least {need} checkpoints, got {got}")]
    InsufficientCheckpoints { need: usize, got: usize },
    #[error("could not start worker pool: {0}")]
    Workers(String),
}

impl PipelineError {
    /// Failures of the numerical core rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::Fit(DmdcError::SvdFailed | DmdcError::Degenerate(_) | DmdcError::Diverged(_))
                | Self::Metrics(MetricsError::EigenNoConvergence(_) | MetricsError::SvdFailed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRecord {
    pub checkpoint: u64,
    pub seed: u64,
    pub max_eig_norm: f64,
    pub normalized_ctrb_rank: f64,
    pub reduced_rank_r: usize,
    pub mse_one_step: f64,
    pub passed_gate: bool,
    pub median_reward: f64,
    pub trial_count: usize,
}

/// Lower median: the `⌈k/2⌉`-th smallest value.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Fits one model to every trajectory in `set` and computes its metrics.
pub fn analyze_checkpoint(set: &TrajectorySet, config: &AnalysisConfig) -> Result<MetricRecord, PipelineError> {
    config.validate()?;
    let first = &set.trajectories()[0];
    let tag = (first.checkpoint(), first.seed());
    if let Some(other) = set
        .trajectories()
        .iter()
        .map(|t| (t.checkpoint(), t.seed()))
        .find(|&t| t != tag)
    {
        return Err(PipelineError::MixedTags(tag, other));
    }

    let snapshots = build_snapshots(set, &config.embed)?;
    let model = fit_dmdc_with(&snapshots, config.fit)?;
    let diag = reconstruction_mse(&model, &snapshots, config.mse_gate)?;
    let spec = spectrum(&model)?;
    let ctrb = normalized_ctrb_rank(&model, config.ctrb_rel_tol)?;
    let rewards: Vec<f64> = set.trajectories().iter().map(|t| t.total_reward()).collect();

    Ok(MetricRecord {
        checkpoint: tag.0,
        seed: tag.1,
        max_eig_norm: spec.max_eig_norm,
        normalized_ctrb_rank: ctrb.normalized_rank,
        reduced_rank_r: model.r,
        mse_one_step: diag.mse_one_step,
        passed_gate: diag.passed_gate,
        median_reward: lower_median(&rewards).expect("sets are non-empty"),
        trial_count: set.len(),
    })
}

/// [`analyze_checkpoint`] over many sets on `jobs` worker threads. Results
/// come back in input order and do not depend on `jobs`.
pub fn analyze_all(
    sets: &[TrajectorySet],
    config: &AnalysisConfig,
    jobs: usize,
) -> Result<Vec<MetricRecord>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    pool.install(|| sets.par_iter().map(|s| analyze_checkpoint(s, config)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MedianReward,
    MaxEigNorm,
    NormalizedCtrbRank,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Self::MedianReward, Self::MaxEigNorm, Self::NormalizedCtrbRank];

    pub fn name(&self) -> &'static str {
        match self {
            Self::MedianReward => "median_reward",
            Self::MaxEigNorm => "max_eig_norm",
            Self::NormalizedCtrbRank => "normalized_ctrb_rank",
        }
    }

    fn of(&self, r: &MetricRecord) -> f64 {
        match self {
            Self::MedianReward => r.median_reward,
            Self::MaxEigNorm => r.max_eig_norm,
            Self::NormalizedCtrbRank => r.normalized_ctrb_rank,
        }
    }
}

/// Mean and standard error (sample std / √k) over `n` seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Aggregate {
    /// `values` must already be sorted so the result is order-independent.
    fn of_sorted(values: &[f64]) -> Option<Self> {
        let k = values.len();
        if k == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let se = if k == 1 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        };
        Some(Self { mean, se, n: k })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSummary {
    pub checkpoint: u64,
    /// Records seen, passing or not.
    pub records: usize,
    pub gate_failures: usize,
    /// Gate-passing seed values per metric, sorted ascending.
    pub samples: BTreeMap<Metric, Vec<f64>>,
    /// `None` when no seed passed the gate.
    pub aggregates: BTreeMap<Metric, Option<Aggregate>>,
}

impl CheckpointSummary {
    pub fn aggregate(&self, metric: Metric) -> Option<Aggregate> {
        self.aggregates.get(&metric).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Ascending by checkpoint.
    pub checkpoints: Vec<CheckpointSummary>,
}

/// Groups records by checkpoint and aggregates gate-passing seeds.
pub fn summarize_run(records: &[MetricRecord]) -> Result<RunSummary, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    let mut groups: BTreeMap<u64, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.checkpoint).or_default().push(r);
    }
    let checkpoints = groups
        .into_iter()
        .map(|(checkpoint, recs)| {
            let passing: Vec<&MetricRecord> = recs.iter().copied().filter(|r| r.passed_gate).collect();
            let mut samples = BTreeMap::new();
            let mut aggregates = BTreeMap::new();
            for metric in Metric::ALL {
                let mut v: Vec<f64> = passing.iter().map(|r| metric.of(r)).collect();
                v.sort_by(f64::total_cmp);
                aggregates.insert(metric, Aggregate::of_sorted(&v));
                samples.insert(metric, v);
            }
            CheckpointSummary {
                checkpoint,
                records: recs.len(),
                gate_failures: recs.len() - passing.len(),
                samples,
                aggregates,
            }
        })
        .collect();
    Ok(RunSummary { checkpoints })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trend {
    pub metric: Metric,
    pub direction: Direction,
    pub slope: f64,
    /// Infinite when every seed value lies exactly on the fitted line.
    #[serde(serialize_with = "ser_extended_f64")]
    pub t_stat: f64,
}

fn ser_extended_f64<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// A window of consecutive checkpoints with flat reward and at least one
/// metric trending in its progress direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HiddenProgressFlag {
    pub start_checkpoint: u64,
    pub end_checkpoint: u64,
    pub reward_slope: f64,
    pub triggers: Vec<Trend>,
}

/// Least-squares slope of `y` on `x` and the t-statistic of that slope.
///
/// Slopes whose total change over the x span is within `1e-9` of the data
/// scale count as zero; an exact non-zero fit has infinite `t`.
fn slope_t(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let scale = points.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    if (slope * (hi - lo)).abs() <= 1e-9 * scale {
        return Some((0.0, 0.0));
    }
    if n < 3 {
        return Some((slope, 0.0));
    }
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - ym - slope * (p.0 - xm)).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = if se > 0.0 { slope / se } else { slope.signum() * f64::INFINITY };
    Some((slope, t))
}

/// Slides a window of `hp.window()` checkpoints over the summary. Windows
/// touching a checkpoint with no gate-passing seed are skipped.
pub fn detect_hidden_progress(summary: &RunSummary, hp: &HpConfig) -> Result<Vec<HiddenProgressFlag>, PipelineError> {
    let w = hp.window();
    let cps = &summary.checkpoints;
    if cps.len() < w {
        return Err(PipelineError::InsufficientCheckpoints {
            need: w,
            got: cps.len(),
        });
    }
    let reward_means: Vec<Option<f64>> = cps
        .iter()
        .map(|c| c.aggregate(Metric::MedianReward).map(|a| a.mean))
        .collect();
    let known: Vec<f64> = reward_means.iter().flatten().copied().collect();
    let range = known.iter().copied().fold(f64::NEG_INFINITY, f64::max) - known.iter().copied().fold(f64::INFINITY, f64::min);
    let flat_limit = hp.reward_flat_frac * if range.is_finite() { range.max(1.0) } else { 1.0 };

    let mut flags = Vec::new();
    for start in 0..=cps.len() - w {
        let window = &cps[start..start + w];
        let Some(means) = reward_means[start..start + w].iter().copied().collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let x0 = window[0].checkpoint as f64;
        let span = window[w - 1].checkpoint as f64 - x0;
        let pts: Vec<(f64, f64)> = window.iter().zip(&means).map(|(c, &m)| (c.checkpoint as f64 - x0, m)).collect();
        let Some((reward_slope, _)) = slope_t(&pts) else {
            continue;
        };
        if (reward_slope * span).abs() >= flat_limit {
            continue;
        }

        let mut triggers = Vec::new();
        for (metric, wanted) in [
            (Metric::MaxEigNorm, Direction::Decreasing),
            (Metric::NormalizedCtrbRank, Direction::Increasing),
        ] {
            let pts: Vec<(f64, f64)> = window
                .iter()
                .flat_map(|c| c.samples[&metric].iter().map(move |&v| (c.checkpoint as f64 - x0, v)))
                .collect();
            let Some((slope, t)) = slope_t(&pts) else {
                continue;
            };
            let hit = match wanted {
                Direction::Decreasing => t < -hp.trend_t_threshold,
                Direction::Increasing => t > hp.trend_t_threshold,
            };
            if hit {
                triggers.push(Trend {
                    metric,
                    direction: wanted,
                    slope,
                    t_stat: t,
                });
            }
        }
        if !triggers.is_empty() {
            flags.push(HiddenProgressFlag {
                start_checkpoint: window[0].checkpoint,
                end_checkpoint: window[w - 1].checkpoint,
                reward_slope,
                triggers,
            });
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(checkpoint: u64, seed: u64, reward: f64, eig: f64, ctrb: f64) -> MetricRecord {
        MetricRecord {
            checkpoint,
            seed,
            max_eig_norm: eig,
            normalized_ctrb_rank: ctrb,
            reduced_rank_r: 4,
            mse_one_step: 0.001,
            passed_gate: true,
            median_reward: reward,
            trial_count: 10,
        }
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[7.0]), Some(7.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn single_seed_has_zero_se() {
        let s = summarize_run(&[record(0, 0, 5.0, 0.9, 1.0)]).unwrap();
        let a = s.checkpoints[0].aggregate(Metric::MaxEigNorm).unwrap();
        assert_eq!((a.mean, a.se, a.n), (0.9, 0.0, 1));
    }

    #[test]
    fn two_seed_standard_error() {
        let s = summarize_run(&[record(0, 0, 1.0, 0.9, 1.0), record(0, 1, 1.0, 1.0, 1.0)]).unwrap();
        let a = s.checkpoints[0].aggregate(Metric::MaxEigNorm).unwrap();
        assert!((a.mean - 0.95).abs() < 1e-15);
        assert!((a.se - 0.05).abs() < 1e-15);
    }

    #[test]
    fn gate_failures_are_counted_not_aggregated() {
        let mut bad = record(3, 1, 100.0, 5.0, 0.0);
        bad.passed_gate = false;
        let s = summarize_run(&[record(3, 0, 1.0, 0.9, 1.0), bad]).unwrap();
        let c = &s.checkpoints[0];
        assert_eq!((c.records, c.gate_failures), (2, 1));
        assert_eq!(c.aggregate(Metric::MedianReward).unwrap().mean, 1.0);

        let s = summarize_run(&[bad]).unwrap();
        assert_eq!(s.checkpoints[0].aggregate(Metric::MaxEigNorm), None);
    }

    #[test]
    fn checkpoints_sorted() {
        let s = summarize_run(&[record(9, 0, 1.0, 1.0, 1.0), record(2, 0, 1.0, 1.0, 1.0)]).unwrap();
        let cps: Vec<u64> = s.checkpoints.iter().map(|c| c.checkpoint).collect();
        assert_eq!(cps, vec![2, 9]);
        assert_eq!(summarize_run(&[]), Err(PipelineError::NoRecords));
    }

    fn series(reward: impl Fn(u64) -> f64, eig: impl Fn(u64, u64) -> f64, ctrb: impl Fn(u64) -> f64) -> RunSummary {
        let mut recs = Vec::new();
        for c in 0..5 {
            for s in 0..4 {
                recs.push(record(c, s, reward(c), eig(c, s), ctrb(c)));
            }
        }
        summarize_run(&recs).unwrap()
    }

    #[test]
    fn flat_reward_with_falling_eigenvalues_is_flagged() {
        let s = series(|_| 200.0, |c, s| 1.0 - 0.01 * c as f64 + 1e-4 * s as f64, |_| 1.0);
        let flags = detect_hidden_progress(&s, &HpConfig::default()).unwrap();
        assert_eq!(flags.len(), 3);
        for f in &flags {
            assert_eq!(f.triggers.len(), 1);
            assert_eq!(f.triggers[0].metric, Metric::MaxEigNorm);
            assert_eq!(f.triggers[0].direction, Direction::Decreasing);
            assert!(f.triggers[0].t_stat < -2.0);
        }
    }

    #[test]
    fn constant_series_is_not_flagged() {
        let s = series(|_| 200.0, |_, _| 0.97, |_| 0.5);
        assert!(detect_hidden_progress(&s, &HpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn rising_reward_is_not_flat() {
        let s = series(|c| 10.0 * c as f64, |c, s| 1.0 - 0.01 * c as f64 + 1e-4 * s as f64, |c| 0.2 * c as f64);
        assert!(detect_hidden_progress(&s, &HpConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn rising_controllability_triggers_with_exact_t() {
        let s = series(|_| 50.0, |_, _| 0.9, |c| 0.25 + 0.125 * c as f64);
        let flags = detect_hidden_progress(&s, &HpConfig::default()).unwrap();
        assert!(!flags.is_empty());
        let t = flags[0].triggers[0];
        assert_eq!(t.metric, Metric::NormalizedCtrbRank);
        assert_eq!(t.t_stat, f64::INFINITY);
    }

    #[test]
    fn too_few_checkpoints() {
        let s = summarize_run(&[record(0, 0, 1.0, 1.0, 1.0), record(1, 0, 1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(
            detect_hidden_progress(&s, &HpConfig::default()),
            Err(PipelineError::InsufficientCheckpoints { need: 3, got: 2 })
        );
    }
}
