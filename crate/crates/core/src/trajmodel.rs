//! Trajectory data model and the `koopctl-traj-v1` interchange format.
//!
//! A file is newline-delimited JSON: one header record describing the
//! environment, then one record per trial. Actions are stored as integer
//! indices; one-hot expansion happens at embedding time.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

pub const TRAJ_FORMAT: &str = "koopctl-traj-v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unsupported format tag {found:?}, expected {TRAJ_FORMAT:?}")]
    FormatTag { line: usize, found: String },
    #[error("line {line}: {msg}")]
    Dimension { line: usize, msg: String },
    #[error("line {line}: action {action} at index {index} out of range [0, {action_count})")]
    ActionOutOfRange {
        line: usize,
        index: usize,
        action: i64,
        action_count: usize,
    },
    #[error("line {line}: non-finite value in {field}")]
    NonFinite { line: usize, field: &'static str },
    #[error("input contains no header record")]
    MissingHeader,
    #[error("invalid environment spec: {0}")]
    InvalidEnv(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("trajectory set is empty")]
    EmptySet,
    #[error("action {action} out of range [0, {action_count})")]
    OneHotRange { action: usize, action_count: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Static description of an environment: state dimension, action count
/// and a label per state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    name: String,
    state_dim: usize,
    action_count: usize,
    state_labels: Vec<String>,
}

impl EnvSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        action_count: usize,
        state_labels: Vec<String>,
    ) -> Result<Self, TrajError> {
        if state_dim < 1 {
            return Err(TrajError::InvalidEnv("state_dim must be at least 1".into()));
        }
        if action_count < 2 {
            return Err(TrajError::InvalidEnv("action_count must be at least 2".into()));
        }
        if state_labels.len() != state_dim {
            return Err(TrajError::InvalidEnv(format!(
                "expected {state_dim} state labels, got {}",
                state_labels.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            action_count,
            state_labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }
}

/// One rollout. Row `t` of `states` is the state at time `t`; `actions[t]`
/// is the action that produced row `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: DMatrix<f64>,
    actions: Vec<usize>,
    total_reward: f64,
    checkpoint: u64,
    seed: u64,
}

impl Trajectory {
    pub fn new(
        states: DMatrix<f64>,
        actions: Vec<usize>,
        total_reward: f64,
        checkpoint: u64,
        seed: u64,
    ) -> Result<Self, TrajError> {
        let len = states.nrows();
        if len < 2 {
            return Err(TrajError::InvalidTrajectory(format!(
                "need at least 2 states, got {len}"
            )));
        }
        if actions.len() != len - 1 {
            return Err(TrajError::InvalidTrajectory(format!(
                "{len} states require {} actions, got {}",
                len - 1,
                actions.len()
            )));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(TrajError::InvalidTrajectory("non-finite state entry".into()));
        }
        if !total_reward.is_finite() {
            return Err(TrajError::InvalidTrajectory("non-finite reward".into()));
        }
        Ok(Self {
            states,
            actions,
            total_reward,
            checkpoint,
            seed,
        })
    }

    /// `T × state_dim` state matrix.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn checkpoint(&self) -> u64 {
        self.checkpoint
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of recorded states `T`.
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    /// Number of (state, action, next state) transitions, `T - 1`.
    pub fn transitions(&self) -> usize {
        self.actions.len()
    }

    pub(crate) fn with_states(&self, states: DMatrix<f64>) -> Self {
        Self {
            states,
            ..self.clone()
        }
    }
}

/// Environment header plus an ordered, non-empty list of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    env: EnvSpec,
    trajectories: Vec<Trajectory>,
    comment: Option<String>,
}

impl TrajectorySet {
    pub fn new(env: EnvSpec, trajectories: Vec<Trajectory>) -> Result<Self, TrajError> {
        if trajectories.is_empty() {
            return Err(TrajError::EmptySet);
        }
        for (i, tr) in trajectories.iter().enumerate() {
            if tr.state_dim() != env.state_dim {
                return Err(TrajError::InvalidTrajectory(format!(
                    "trajectory {i} has {} state columns, env declares {}",
                    tr.state_dim(),
                    env.state_dim
                )));
            }
            if let Some(&a) = tr.actions.iter().find(|&&a| a >= env.action_count) {
                return Err(TrajError::InvalidTrajectory(format!(
                    "trajectory {i} has action {a} outside [0, {})",
                    env.action_count
                )));
            }
        }
        Ok(Self {
            env,
            trajectories,
            comment: None,
        })
    }

    /// Attaches a free-form header comment (used for provenance).
    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comment = Some(comment.into());
        self
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn comment(&self) -> Option<&str> {
        self.comment.as_deref()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn into_parts(self) -> (EnvSpec, Vec<Trajectory>, Option<String>) {
        (self.env, self.trajectories, self.comment)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    env: EnvRecord,
    #[serde(default)]
    comment: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvRecord {
    name: String,
    state_dim: usize,
    action_count: usize,
    state_labels: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialRecord {
    checkpoint: u64,
    seed: u64,
    reward: f64,
    states: Vec<Vec<f64>>,
    actions: Vec<i64>,
}

/// Parses an interchange file. Blank lines are ignored; line numbers in
/// errors are 1-based.
pub fn parse_trajectory_file(bytes: &[u8]) -> Result<TrajectorySet, TrajError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TrajError::Malformed {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        msg: "invalid UTF-8".into(),
    })?;

    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, htext) = lines.next().ok_or(TrajError::MissingHeader)?;
    let header: HeaderRecord = serde_json::from_str(htext).map_err(|e| TrajError::Malformed {
        line: hline,
        msg: e.to_string(),
    })?;
    if header.format != TRAJ_FORMAT {
        return Err(TrajError::FormatTag {
            line: hline,
            found: header.format,
        });
    }
    let env = EnvSpec::new(
        header.env.name,
        header.env.state_dim,
        header.env.action_count,
        header.env.state_labels,
    )
    .map_err(|e| TrajError::Dimension {
        line: hline,
        msg: e.to_string(),
    })?;

    let mut trajectories = Vec::new();
    for (line, rec_text) in lines {
        let rec: TrialRecord = serde_json::from_str(rec_text).map_err(|e| TrajError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        trajectories.push(trial_from_record(line, rec, &env)?);
    }
    if trajectories.is_empty() {
        return Err(TrajError::EmptySet);
    }

    let mut set = TrajectorySet::new(env, trajectories)?;
    set.comment = header.comment;
    Ok(set)
}

fn trial_from_record(line: usize, rec: TrialRecord, env: &EnvSpec) -> Result<Trajectory, TrajError> {
    let len = rec.states.len();
    if len < 2 {
        return Err(TrajError::Dimension {
            line,
            msg: format!("trial needs at least 2 states, got {len}"),
        });
    }
    if rec.actions.len() != len - 1 {
        return Err(TrajError::Dimension {
            line,
            msg: format!("{len} states require {} actions, got {}", len - 1, rec.actions.len()),
        });
    }
    if let Some((row, r)) = rec
        .states
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != env.state_dim)
    {
        return Err(TrajError::Dimension {
            line,
            msg: format!(
                "state row {row} has {} entries, header declares state_dim {}",
                r.len(),
                env.state_dim
            ),
        });
    }
    if !rec.reward.is_finite() {
        return Err(TrajError::NonFinite { line, field: "reward" });
    }
    if rec.states.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TrajError::NonFinite { line, field: "states" });
    }
    let mut actions = Vec::with_capacity(rec.actions.len());
    for (index, &a) in rec.actions.iter().enumerate() {
        if a < 0 || a as u64 >= env.action_count as u64 {
            return Err(TrajError::ActionOutOfRange {
                line,
                index,
                action: a,
                action_count: env.action_count,
            });
        }
        actions.push(a as usize);
    }
    let states = DMatrix::from_fn(len, env.state_dim, |i, j| rec.states[i][j]);
    Trajectory::new(states, actions, rec.reward, rec.checkpoint, rec.seed)
        .map_err(|e| TrajError::Dimension { line, msg: e.to_string() })
}

/// Shortest round-trip decimal form of a finite float.
pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    debug_assert!(v.is_finite());
    let s = serde_json::to_string(&v).expect("finite float serializes");
    out.push_str(&s);
}

pub(crate) fn fmt_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serializes"));
}

/// Emits the canonical interchange form: header, then one line per trial,
/// every line newline-terminated.
pub fn serialize_trajectory_file(set: &TrajectorySet) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\"format\":");
    fmt_str(&mut out, TRAJ_FORMAT);
    out.push_str(",\"env\":{\"name\":");
    fmt_str(&mut out, &set.env.name);
    let _ = write!(
        out,
        ",\"state_dim\":{},\"action_count\":{},\"state_labels\":[",
        set.env.state_dim, set.env.action_count
    );
    for (i, l) in set.env.state_labels.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        fmt_str(&mut out, l);
    }
    out.push_str("]}");
    if let Some(c) = &set.comment {
        out.push_str(",\"comment\":");
        fmt_str(&mut out, c);
    }
    out.push_str("}\n");

    for tr in &set.trajectories {
        let _ = write!(out, "{{\"checkpoint\":{},\"seed\":{},\"reward\":", tr.checkpoint, tr.seed);
        fmt_f64(&mut out, tr.total_reward);
        out.push_str(",\"states\":[");
        for i in 0..tr.states.nrows() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for j in 0..tr.states.ncols() {
                if j > 0 {
                    out.push(',');
                }
                fmt_f64(&mut out, tr.states[(i, j)]);
            }
            out.push(']');
        }
        out.push_str("],\"actions\":[");
        for (i, a) in tr.actions.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{a}");
        }
        out.push_str("]}\n");
    }
    out.into_bytes()
}

/// One-hot embedding of a discrete action; this is the control input `u_t`.
pub fn one_hot_encode(action: usize, action_count: usize) -> Result<DVector<f64>, TrajError> {
    if action >= action_count {
        return Err(TrajError::OneHotRange {
            action,
            action_count,
        });
    }
    let mut v = DVector::zeros(action_count);
    v[action] = 1.0;
    Ok(v)
}

/// Per-coordinate standardization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl ScalingParams {
    pub fn new(mean: DVector<f64>, scale: DVector<f64>) -> Result<Self, TrajError> {
        if mean.len() != scale.len() {
            return Err(TrajError::DimensionMismatch {
                expected: mean.len(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(TrajError::InvalidEnv("scale entries must be finite and positive".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            scale: DVector::from_element(dim, 1.0),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Pooled mean and population standard deviation over every state of every
/// trajectory. Coordinates with (numerically) zero spread get scale 1.
pub fn fit_scaling(set: &TrajectorySet) -> ScalingParams {
    let dim = set.env.state_dim;
    let count: usize = set.trajectories.iter().map(Trajectory::len).sum();
    let n = count as f64;

    // Sums run on values divided by the column's largest magnitude so huge
    // but finite states cannot overflow.
    let mut peak = DVector::<f64>::zeros(dim);
    for tr in &set.trajectories {
        for (j, col) in tr.states.column_iter().enumerate() {
            peak[j] = col.iter().fold(peak[j], |p, v| p.max(v.abs()));
        }
    }
    peak.iter_mut().filter(|p| **p == 0.0).for_each(|p| *p = 1.0);

    let mut mean = DVector::zeros(dim);
    for tr in &set.trajectories {
        for (j, col) in tr.states.column_iter().enumerate() {
            mean[j] += col.iter().map(|v| v / peak[j]).sum::<f64>();
        }
    }
    mean /= n;

    let mut var = DVector::<f64>::zeros(dim);
    for tr in &set.trajectories {
        for (j, col) in tr.states.column_iter().enumerate() {
            var[j] += col.iter().map(|v| (v / peak[j] - mean[j]).powi(2)).sum::<f64>();
        }
    }
    var /= n;
    let mean = mean.component_mul(&peak);
    let sd: Vec<f64> = var.iter().zip(peak.iter()).map(|(v, p)| v.sqrt() * p).collect();

    let scale = DVector::from_iterator(
        dim,
        sd.iter().zip(mean.iter()).map(|(&sd, &m)| {
            if sd <= 1e-12 * m.abs().max(1.0) {
                1.0
            } else {
                sd
            }
        }),
    );
    ScalingParams { mean, scale }
}

/// Maps every state row `x` to `(x - mean) / scale`.
pub fn apply_scaling(set: &TrajectorySet, params: &ScalingParams) -> Result<TrajectorySet, TrajError> {
    map_states(set, params, |x, m, s| (x - m) / s)
}

/// Inverse of [`apply_scaling`].
pub fn invert_scaling(set: &TrajectorySet, params: &ScalingParams) -> Result<TrajectorySet, TrajError> {
    map_states(set, params, |x, m, s| x * s + m)
}

fn map_states(
    set: &TrajectorySet,
    params: &ScalingParams,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<TrajectorySet, TrajError> {
    if params.dim() != set.env.state_dim {
        return Err(TrajError::DimensionMismatch {
            expected: set.env.state_dim,
            got: params.dim(),
        });
    }
    let trajectories = set
        .trajectories
        .iter()
        .map(|tr| {
            let states = DMatrix::from_fn(tr.len(), params.dim(), |i, j| {
                f(tr.states[(i, j)], params.mean[j], params.scale[j])
            });
            tr.with_states(states)
        })
        .collect();
    Ok(TrajectorySet {
        env: set.env.clone(),
        trajectories,
        comment: set.comment.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(n: usize, q: usize) -> EnvSpec {
        EnvSpec::new("test", n, q, (0..n).map(|i| format!("s{i}")).collect()).unwrap()
    }

    const MINIMAL: &str = concat!(
        "{\"format\":\"koopctl-traj-v1\",\"env\":{\"name\":\"cartpole\",\"state_dim\":4,\"action_count\":2,",
        "\"state_labels\":[\"x\",\"x_dot\",\"theta\",\"theta_dot\"]}}\n",
        "{\"checkpoint\":0,\"seed\":1,\"reward\":2.0,\"states\":[[0.0,0.1,0.2,0.3],[1.0,1.1,1.2,1.3],[2.0,2.1,2.2,2.3]],\"actions\":[0,1]}\n"
    );

    #[test]
    fn parses_minimal_file() {
        let set = parse_trajectory_file(MINIMAL.as_bytes()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.trajectories()[0].len(), 3);
        assert_eq!(set.trajectories()[0].actions(), &[0, 1]);
        assert_eq!(set.env().state_dim(), 4);
        // canonical already
        assert_eq!(serialize_trajectory_file(&set), MINIMAL.as_bytes());
    }

    #[test]
    fn serialized_record_count() {
        let set = parse_trajectory_file(MINIMAL.as_bytes()).unwrap();
        let out = serialize_trajectory_file(&set);
        assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), 2);
    }

    #[test]
    fn action_out_of_range_names_record() {
        let bad = MINIMAL.replace("\"actions\":[0,1]", "\"actions\":[0,2]");
        match parse_trajectory_file(bad.as_bytes()) {
            Err(TrajError::ActionOutOfRange { line, action, index, .. }) => {
                assert_eq!((line, action, index), (2, 2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let neg = MINIMAL.replace("\"actions\":[0,1]", "\"actions\":[-1,1]");
        assert!(matches!(
            parse_trajectory_file(neg.as_bytes()),
            Err(TrajError::ActionOutOfRange { action: -1, .. })
        ));
    }

    #[test]
    fn rejects_dimension_mismatch_and_garbage() {
        let bad = MINIMAL.replace("[1.0,1.1,1.2,1.3]", "[1.0,1.1,1.2]");
        assert!(matches!(
            parse_trajectory_file(bad.as_bytes()),
            Err(TrajError::Dimension { line: 2, .. })
        ));
        let bad = MINIMAL.replace("\"actions\":[0,1]", "\"actions\":[0]");
        assert!(matches!(parse_trajectory_file(bad.as_bytes()), Err(TrajError::Dimension { .. })));
        let garbage = format!("{MINIMAL}{{not json\n");
        assert!(matches!(
            parse_trajectory_file(garbage.as_bytes()),
            Err(TrajError::Malformed { line: 3, .. })
        ));
        let overflow = MINIMAL.replace("0.3]", "1e400]");
        assert!(parse_trajectory_file(overflow.as_bytes()).is_err());
        assert!(matches!(parse_trajectory_file(b""), Err(TrajError::MissingHeader)));
        let header_only = MINIMAL.lines().next().unwrap();
        assert!(matches!(parse_trajectory_file(header_only.as_bytes()), Err(TrajError::EmptySet)));
        let tag = MINIMAL.replace("koopctl-traj-v1", "koopctl-traj-v9");
        assert!(matches!(parse_trajectory_file(tag.as_bytes()), Err(TrajError::FormatTag { .. })));
    }

    #[test]
    fn empty_set_rejected_at_construction() {
        assert_eq!(TrajectorySet::new(env(2, 2), vec![]), Err(TrajError::EmptySet));
    }

    #[test]
    fn trajectory_invariants() {
        let s = DMatrix::zeros(1, 2);
        assert!(Trajectory::new(s, vec![], 0.0, 0, 0).is_err());
        let s = DMatrix::zeros(3, 2);
        assert!(Trajectory::new(s.clone(), vec![0], 0.0, 0, 0).is_err());
        let mut bad = s.clone();
        bad[(1, 1)] = f64::NAN;
        assert!(Trajectory::new(bad, vec![0, 0], 0.0, 0, 0).is_err());
        let tr = Trajectory::new(s, vec![0, 1], 0.0, 0, 0).unwrap();
        assert_eq!(tr.transitions(), 2);
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot_encode(0, 2).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(one_hot_encode(1, 2).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(one_hot_encode(2, 4).unwrap().as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(one_hot_encode(2, 2).is_err());
    }

    #[test]
    fn scaling_zero_variance_and_symmetric() {
        let states = DMatrix::from_row_slice(3, 2, &[0.7, -3.0, 0.7, -3.0, 0.7, -3.0]);
        let set = TrajectorySet::new(
            env(2, 2),
            vec![Trajectory::new(states, vec![0, 1], 1.0, 0, 0).unwrap()],
        )
        .unwrap();
        let p = fit_scaling(&set);
        assert!((p.mean()[0] - 0.7).abs() < 1e-15 && (p.mean()[1] + 3.0).abs() < 1e-15);
        assert_eq!(p.scale().as_slice(), &[1.0, 1.0]);

        let states = DMatrix::from_row_slice(4, 1, &[-1.0, 1.0, -1.0, 1.0]);
        let set = TrajectorySet::new(
            env(1, 2),
            vec![Trajectory::new(states, vec![0, 1, 0], 1.0, 0, 0).unwrap()],
        )
        .unwrap();
        let p = fit_scaling(&set);
        assert_eq!(p.mean()[0], 0.0);
        assert_eq!(p.scale()[0], 1.0);
    }

    #[test]
    fn identity_scaling_and_dimension_check() {
        let set = parse_trajectory_file(MINIMAL.as_bytes()).unwrap();
        let out = apply_scaling(&set, &ScalingParams::identity(4)).unwrap();
        assert_eq!(out, set);
        assert!(apply_scaling(&set, &ScalingParams::identity(3)).is_err());
        assert!(ScalingParams::new(DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0])).is_err());
    }
}
