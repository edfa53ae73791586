use rand::Rng;

use super::{Env, EnvError};

/// Bang-bang state feedback: push right when
/// `k·[x, ẋ, θ, θ̇] > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleGains {
    pub position: f64,
    pub velocity: f64,
    pub angle: f64,
    pub angular_velocity: f64,
}

impl Default for CartPoleGains {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 2.0,
            angle: 10.0,
            angular_velocity: 2.0,
        }
    }
}

/// Attitude loop plus a descent-rate schedule `ẏ* = -(rate·y + touchdown)`
/// and a tilt command steering toward the pad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderGains {
    pub descent_rate: f64,
    pub touchdown_speed: f64,
    pub position: f64,
    pub velocity: f64,
    pub max_tilt: f64,
    pub attitude: f64,
    pub attitude_rate: f64,
    pub deadband: f64,
}

impl Default for LanderGains {
    fn default() -> Self {
        Self {
            descent_rate: 0.4,
            touchdown_speed: 0.05,
            position: 0.3,
            velocity: 1.0,
            max_tilt: 0.2,
            attitude: 2.0,
            attitude_rate: 1.0,
            deadband: 0.05,
        }
    }
}

/// Holds altitude and attitude; does not correct horizontal drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverGains {
    pub target_height: f64,
    pub height: f64,
    pub attitude: f64,
    pub attitude_rate: f64,
    pub deadband: f64,
}

impl Default for HoverGains {
    fn default() -> Self {
        Self {
            target_height: 1.0,
            height: 1.0,
            attitude: 2.0,
            attitude_rate: 1.0,
            deadband: 0.05,
        }
    }
}

/// Scripted stand-ins for learned policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Random { seed: u64 },
    CartPolePd(CartPoleGains),
    /// `CartPolePd` that takes a uniformly random action with probability
    /// `epsilon`.
    CartPoleNoisyPd { gains: CartPoleGains, epsilon: f64, seed: u64 },
    /// Torque against the first link's swing when its speed exceeds
    /// `threshold`, otherwise none.
    AcrobotEnergyPump { threshold: f64 },
    LanderDescentPd(LanderGains),
    LanderNoop,
    LanderHover(HoverGains),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Random { .. } => "random",
            Self::CartPolePd(_) => "cartpole-pd",
            Self::CartPoleNoisyPd { .. } => "cartpole-noisy-pd",
            Self::AcrobotEnergyPump { .. } => "acrobot-energy-pump",
            Self::LanderDescentPd(_) => "lander-descent-pd",
            Self::LanderNoop => "lander-noop",
            Self::LanderHover(_) => "lander-hover",
        }
    }

    pub(crate) fn seed(&self) -> u64 {
        match self {
            Self::Random { seed } | Self::CartPoleNoisyPd { seed, .. } => *seed,
            _ => 0,
        }
    }

    pub fn check_env(&self, env: Env) -> Result<(), EnvError> {
        let ok = match self {
            Self::Random { .. } => true,
            Self::CartPolePd(_) | Self::CartPoleNoisyPd { .. } => env == Env::CartPole,
            Self::AcrobotEnergyPump { .. } => env == Env::Acrobot,
            Self::LanderDescentPd(_) | Self::LanderNoop | Self::LanderHover(_) => env == Env::Lander,
        };
        if ok {
            Ok(())
        } else {
            Err(EnvError::Incompatible {
                policy: self.name().into(),
                env: env.name().into(),
            })
        }
    }

    pub fn act<R: Rng>(&self, env: Env, state: &[f64], rng: &mut R) -> usize {
        match self {
            Self::Random { .. } => rng.random_range(0..env.action_count()),
            Self::CartPolePd(g) => pd_action(g, state),
            Self::CartPoleNoisyPd { gains, epsilon, .. } => {
                if rng.random::<f64>() < *epsilon {
                    rng.random_range(0..2)
                } else {
                    pd_action(gains, state)
                }
            }
            Self::AcrobotEnergyPump { threshold } => {
                let w = state[4];
                if w > *threshold {
                    0
                } else if w < -*threshold {
                    2
                } else {
                    1
                }
            }
            Self::LanderNoop => 0,
            Self::LanderHover(g) => lander_action(
                state,
                0.0,
                g.attitude,
                g.attitude_rate,
                g.deadband,
                g.height * (g.target_height - state[1]),
            ),
            Self::LanderDescentPd(g) => {
                if state[6] > 0.5 || state[7] > 0.5 {
                    return 0;
                }
                let tilt = (g.position * state[0] + g.velocity * state[2]).clamp(-g.max_tilt, g.max_tilt);
                let vy_target = -(g.descent_rate * state[1].max(0.0) + g.touchdown_speed);
                lander_action(state, tilt, g.attitude, g.attitude_rate, g.deadband, vy_target)
            }
        }
    }
}

fn pd_action(g: &CartPoleGains, state: &[f64]) -> usize {
    let u = g.position * state[0] + g.velocity * state[1] + g.angle * state[2] + g.angular_velocity * state[3];
    usize::from(u > 0.0)
}

/// Side thrusters when the attitude command leaves the deadband, otherwise
/// the main engine whenever the descent is faster than `vy_target`.
fn lander_action(state: &[f64], tilt: f64, ka: f64, kw: f64, deadband: f64, vy_target: f64) -> usize {
    let cmd = ka * (state[4] - tilt) + kw * state[5];
    if cmd > deadband {
        1
    } else if cmd < -deadband {
        3
    } else if state[3] < vy_target {
        2
    } else {
        0
    }
}
