//! Time-delay (Hankel) embedding and snapshot assembly.
//!
//! The lifted state stacks the `n_delay` most recent states, newest block
//! first: `z_t = [x_t, x_{t-1}, ..., x_{t-n_delay+1}]`. Snapshot columns are
//! never chained across trajectory boundaries.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::trajmodel::{apply_scaling, fit_scaling, ScalingParams, TrajError, Trajectory, TrajectorySet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("n_delay must be at least 1")]
    ZeroDelay,
    #[error("trajectory too short for embedding: need at least {required} states, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("every trajectory is shorter than the required {required} states")]
    AllTooShort { required: usize },
    #[error(transparent)]
    Traj(#[from] TrajError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    n_delay: usize,
    pub standardize: bool,
}

impl EmbedConfig {
    pub fn new(n_delay: usize, standardize: bool) -> Result<Self, EmbedError> {
        if n_delay == 0 {
            return Err(EmbedError::ZeroDelay);
        }
        Ok(Self { n_delay, standardize })
    }

    pub fn n_delay(&self) -> usize {
        self.n_delay
    }
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            n_delay: 1,
            standardize: true,
        }
    }
}

/// Column-aligned snapshot matrices `(Z, Z', U)`.
#[derive(Debug, Clone)]
pub struct SnapshotMatrices {
    /// `n × m` lifted states.
    pub z: DMatrix<f64>,
    /// `n × m` successors of `z`.
    pub z_next: DMatrix<f64>,
    /// `q × m` one-hot inputs.
    pub u: DMatrix<f64>,
    pub state_dim: usize,
    pub n_delay: usize,
    /// Index of the source trajectory for each column.
    pub origin: Vec<usize>,
    /// Trajectories dropped for being shorter than `n_delay + 1`.
    pub skipped: usize,
    /// Standardization applied before embedding, if any.
    pub scaling: Option<ScalingParams>,
}

impl SnapshotMatrices {
    /// Lifted dimension `n = n_delay * state_dim`.
    pub fn lifted_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Number of snapshot columns `m`.
    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }
}

/// Delay embedding of one trajectory; row `k` is
/// `[x_{k+n_delay-1}, ..., x_k]`.
pub fn delay_embed(trajectory: &Trajectory, n_delay: usize) -> Result<DMatrix<f64>, EmbedError> {
    if n_delay == 0 {
        return Err(EmbedError::ZeroDelay);
    }
    let len = trajectory.len();
    if len < n_delay + 1 {
        return Err(EmbedError::TooShort {
            required: n_delay + 1,
            got: len,
        });
    }
    let d = trajectory.state_dim();
    let x = trajectory.states();
    Ok(DMatrix::from_fn(len - n_delay + 1, n_delay * d, |k, c| {
        let (block, j) = (c / d, c % d);
        x[(k + n_delay - 1 - block, j)]
    }))
}

/// Assembles `(Z, Z', U)` from every trajectory long enough to embed.
///
/// For a trajectory with `T` states this contributes `T - n_delay` columns;
/// column `k` pairs `z` at time `t = k + n_delay - 1` with `z_{t+1}` and the
/// one-hot of `a_t`.
pub fn build_snapshots(set: &TrajectorySet, config: &EmbedConfig) -> Result<SnapshotMatrices, EmbedError> {
    let n_delay = config.n_delay;
    let (scaled, scaling) = if config.standardize {
        let params = fit_scaling(set);
        (apply_scaling(set, &params)?, Some(params))
    } else {
        (set.clone(), None)
    };

    let d = set.env().state_dim();
    let q = set.env().action_count();
    let n = n_delay * d;
    let usable: Vec<(usize, &Trajectory)> = scaled
        .trajectories()
        .iter()
        .enumerate()
        .filter(|(_, tr)| tr.len() > n_delay)
        .collect();
    let skipped = scaled.len() - usable.len();
    if usable.is_empty() {
        return Err(EmbedError::AllTooShort { required: n_delay + 1 });
    }
    let m: usize = usable.iter().map(|(_, tr)| tr.len() - n_delay).sum();

    let mut z = DMatrix::zeros(n, m);
    let mut z_next = DMatrix::zeros(n, m);
    let mut u = DMatrix::zeros(q, m);
    let mut origin = Vec::with_capacity(m);
    let mut col = 0;
    for (idx, tr) in usable {
        let emb = delay_embed(tr, n_delay)?;
        for k in 0..emb.nrows() - 1 {
            z.column_mut(col).copy_from(&emb.row(k).transpose());
            z_next.column_mut(col).copy_from(&emb.row(k + 1).transpose());
            u[(tr.actions()[k + n_delay - 1], col)] = 1.0;
            origin.push(idx);
            col += 1;
        }
    }
    debug_assert_eq!(col, m);

    Ok(SnapshotMatrices {
        z,
        z_next,
        u,
        state_dim: d,
        n_delay,
        origin,
        skipped,
        scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajmodel::EnvSpec;

    fn traj(rows: &[&[f64]], actions: Vec<usize>) -> Trajectory {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Trajectory::new(DMatrix::from_row_slice(rows.len(), d, &flat), actions, 0.0, 0, 0).unwrap()
    }

    #[test]
    fn identity_embedding() {
        let tr = traj(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], vec![0, 1]);
        assert_eq!(&delay_embed(&tr, 1).unwrap(), tr.states());
    }

    #[test]
    fn two_delay_hand_example() {
        let (a, b, c) = ([1.0, 2.0], [3.0, 4.0], [5.0, 6.0]);
        let tr = traj(&[&a, &b, &c], vec![0, 1]);
        let e = delay_embed(&tr, 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[3.0, 4.0, 1.0, 2.0, 5.0, 6.0, 3.0, 4.0]);
        assert_eq!(e, expected);
    }

    #[test]
    fn scalar_ramp_matches_enumeration() {
        let rows: Vec<[f64; 1]> = (0..5).map(|t| [t as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let tr = traj(&refs, vec![0; 4]);
        let e = delay_embed(&tr, 3).unwrap();
        // enumerate directly from the definition
        let mut expected = Vec::new();
        for k in 0..3 {
            for lag in 0..3 {
                expected.push((k + 2 - lag) as f64);
            }
        }
        assert_eq!(e, DMatrix::from_row_slice(3, 3, &expected));
        assert_eq!(e.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn too_short_reports_minimum() {
        let tr = traj(&[&[0.0], &[1.0], &[2.0]], vec![0, 0]);
        assert_eq!(
            delay_embed(&tr, 3),
            Err(EmbedError::TooShort { required: 4, got: 3 })
        );
        assert_eq!(delay_embed(&tr, 0), Err(EmbedError::ZeroDelay));
    }

    #[test]
    fn snapshot_count_and_alignment() {
        let rows: Vec<[f64; 1]> = (0..6).map(|t| [t as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let tr = traj(&refs, vec![0, 1, 0, 1, 1]);
        let env = EnvSpec::new("t", 1, 2, vec!["x".into()]).unwrap();
        let short = traj(&[&[9.0], &[9.0]], vec![0]);
        let set = TrajectorySet::new(env, vec![tr, short]).unwrap();
        let cfg = EmbedConfig::new(4, false).unwrap();
        let s = build_snapshots(&set, &cfg).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.skipped, 1);
        assert_eq!(s.z.column(0).as_slice(), &[3.0, 2.0, 1.0, 0.0]);
        assert_eq!(s.z_next.column(0).as_slice(), &[4.0, 3.0, 2.0, 1.0]);
        // action at time 3 produced x_4
        assert_eq!(s.u.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(s.u.column(1).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn all_too_short_is_an_error() {
        let env = EnvSpec::new("t", 1, 2, vec!["x".into()]).unwrap();
        let set = TrajectorySet::new(env, vec![traj(&[&[0.0], &[1.0]], vec![0])]).unwrap();
        let cfg = EmbedConfig::new(2, true).unwrap();
        assert_eq!(
            build_snapshots(&set, &cfg).unwrap_err(),
            EmbedError::AllTooShort { required: 3 }
        );
    }
}
