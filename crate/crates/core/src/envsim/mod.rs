//! Deterministic benchmark simulators and scripted policies of graded skill.
//!
//! Every stepper is a pure function of `(state, action)`. A rollout is fully
//! determined by its seed: the seed draws the initial state and drives any
//! stochastic policy.

pub mod acrobot;
pub mod cartpole;
pub mod lander;
mod policy;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trajmodel::{EnvSpec, Trajectory, TrajectorySet};

pub use policy::{CartPoleGains, HoverGains, LanderGains, Policy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected a state of dimension {expected}, got {got}")]
    StateDim { expected: usize, got: usize },
    #[error("state contains a non-finite value")]
    NonFinite,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("action {action} out of range [0, {count})")]
    Action { action: usize, count: usize },
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("policy {policy} cannot drive environment {env}")]
    Incompatible { policy: String, env: String },
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("skill schedule is empty")]
    EmptySchedule,
}

pub(crate) fn check_state(state: &[f64], dim: usize) -> Result<(), EnvError> {
    if state.len() != dim {
        return Err(EnvError::StateDim {
            expected: dim,
            got: state.len(),
        });
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    /// Only ever set by [`rollout`] when the step budget runs out.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Env {
    CartPole,
    Acrobot,
    Lander,
}

impl Env {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CartPole => "cartpole",
            Self::Acrobot => "acrobot",
            Self::Lander => "lander",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::CartPole => 4,
            Self::Acrobot => 6,
            Self::Lander => 8,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            Self::CartPole => 2,
            Self::Acrobot => 3,
            Self::Lander => 4,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        let labels: &[&str] = match self {
            Self::CartPole => &cartpole::LABELS,
            Self::Acrobot => &acrobot::LABELS,
            Self::Lander => &lander::LABELS,
        };
        EnvSpec::new(
            self.name(),
            self.state_dim(),
            self.action_count(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in environment specs are valid")
    }

    pub fn step(&self, state: &[f64], action: usize) -> Result<StepOutcome, EnvError> {
        match self {
            Self::CartPole => cartpole::step(state, action),
            Self::Acrobot => acrobot::step(state, action),
            Self::Lander => lander::step(state, action),
        }
    }

    /// Small uniform perturbation around the nominal start.
    pub fn initial_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::CartPole => (0..4).map(|_| rng.random_range(-0.05..0.05)).collect(),
            Self::Acrobot => {
                let s: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
                acrobot::to_observation(&s)
            }
            Self::Lander => vec![
                rng.random_range(-0.5..0.5),
                1.4 + rng.random_range(-0.2..0.2),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.3..0.0),
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.3..0.3),
                0.0,
                0.0,
            ],
        }
    }
}

impl std::str::FromStr for Env {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" => Ok(Self::CartPole),
            "acrobot" => Ok(Self::Acrobot),
            "lander" | "simplelander" => Ok(Self::Lander),
            _ => Err(EnvError::UnknownEnv(s.to_string())),
        }
    }
}

/// splitmix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rollout seed for trial `trial` of run `seed`. Independent of the
/// checkpoint, so a static policy yields identical data at every checkpoint.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    mix64(mix64(seed) ^ trial)
}

pub fn rollout(env: Env, policy: &Policy, initial_state_seed: u64, max_steps: usize) -> Result<Trajectory, EnvError> {
    rollout_tagged(env, policy, initial_state_seed, max_steps, 0, 0)
}

/// Runs `policy` until termination or `max_steps` transitions, tagging the
/// trajectory with `(checkpoint, seed)`.
pub fn rollout_tagged(
    env: Env,
    policy: &Policy,
    initial_state_seed: u64,
    max_steps: usize,
    checkpoint: u64,
    seed: u64,
) -> Result<Trajectory, EnvError> {
    if max_steps == 0 {
        return Err(EnvError::ZeroSteps);
    }
    policy.check_env(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(initial_state_seed);
    let mut state = env.initial_state(&mut rng);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(mix64(initial_state_seed ^ policy.seed()));

    let dim = env.state_dim();
    let mut flat = state.clone();
    let mut actions = Vec::new();
    let mut total = 0.0;
    for _ in 0..max_steps {
        let action = policy.act(env, &state, &mut policy_rng);
        let out = env.step(&state, action)?;
        actions.push(action);
        total += out.reward;
        flat.extend_from_slice(&out.next_state);
        state = out.next_state;
        if out.terminated {
            break;
        }
    }
    let states = DMatrix::from_row_slice(actions.len() + 1, dim, &flat);
    Ok(Trajectory::new(states, actions, total, checkpoint, seed).expect("simulators produce valid trajectories"))
}

/// One `TrajectorySet` per `(checkpoint, seed)`, in schedule order then
/// seed order.
pub fn generate_skill_series<'a>(
    env: Env,
    schedule: &'a [(u64, Policy)],
    trials_per_checkpoint: usize,
    seeds: &'a [u64],
    max_steps: usize,
) -> Result<impl Iterator<Item = TrajectorySet> + 'a, EnvError> {
    if schedule.is_empty() {
        return Err(EnvError::EmptySchedule);
    }
    if max_steps == 0 {
        return Err(EnvError::ZeroSteps);
    }
    for (_, p) in schedule {
        p.check_env(env)?;
    }
    let trials = trials_per_checkpoint.max(1);
    Ok(schedule.iter().flat_map(move |(checkpoint, policy)| {
        seeds.iter().map(move |&seed| {
            let trajectories = (0..trials as u64)
                .map(|t| {
                    rollout_tagged(env, policy, trial_seed(seed, t), max_steps, *checkpoint, seed)
                        .expect("policy/env compatibility checked up front")
                })
                .collect();
            TrajectorySet::new(env.spec(), trajectories).expect("non-empty trial list")
        })
    }))
}
