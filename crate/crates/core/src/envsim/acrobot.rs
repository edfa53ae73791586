//! Two-link acrobot, torque on the second joint, RK4 integration.
//!
//! Observations are `[cos θ₁, sin θ₁, cos θ₂, sin θ₂, θ̇₁, θ̇₂]`; θ₁ is
//! measured from hanging straight down.

use std::f64::consts::PI;

use super::{EnvError, StepOutcome};

pub const DT: f64 = 0.2;
pub const LINK_LENGTH_1: f64 = 1.0;
pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
/// Centre-of-mass positions along each link.
pub const LINK_COM_1: f64 = 0.5;
pub const LINK_COM_2: f64 = 0.5;
pub const LINK_MOI: f64 = 1.0;
pub const GRAVITY: f64 = 9.8;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;

const CIRCLE_TOL: f64 = 1e-6;

pub const LABELS: [&str; 6] = ["cos_theta1", "sin_theta1", "cos_theta2", "sin_theta2", "theta1_dot", "theta2_dot"];

/// Internal coordinates `[θ₁, θ₂, θ̇₁, θ̇₂]`.
pub type Angles = [f64; 4];

pub fn to_observation(s: &Angles) -> Vec<f64> {
    vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
}

pub fn from_observation(obs: &[f64]) -> Result<Angles, EnvError> {
    super::check_state(obs, 6)?;
    for k in [0, 2] {
        let r = obs[k].hypot(obs[k + 1]);
        if (r - 1.0).abs() > CIRCLE_TOL {
            return Err(EnvError::InvalidState(format!(
                "cos/sin pair {} has radius {r}",
                k / 2 + 1
            )));
        }
    }
    Ok([obs[1].atan2(obs[0]), obs[3].atan2(obs[2]), obs[4], obs[5]])
}

fn derivatives(s: &Angles, torque: f64) -> Angles {
    let (m1, m2, l1, lc1, lc2, i1, i2, g) =
        (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2, LINK_MOI, LINK_MOI, GRAVITY);
    let [t1, t2, dt1, dt2] = *s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (t1 + t2).sin();
    let phi1 = -m2 * l1 * lc2 * dt2 * dt2 * t2.sin() - 2.0 * m2 * l1 * lc2 * dt2 * dt1 * t2.sin()
        + (m1 * lc1 + m2 * l1) * g * t1.sin()
        + phi2;
    let ddt2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1 * dt1 * t2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddt1 = -(d2 * ddt2 + phi1) / d1;
    [dt1, dt2, ddt1, ddt2]
}

fn rk4(s: &Angles, torque: f64, h: f64) -> Angles {
    let add = |a: &Angles, k: &Angles, c: f64| -> Angles { std::array::from_fn(|i| a[i] + c * k[i]) };
    let k1 = derivatives(s, torque);
    let k2 = derivatives(&add(s, &k1, h / 2.0), torque);
    let k3 = derivatives(&add(s, &k2, h / 2.0), torque);
    let k4 = derivatives(&add(s, &k3, h), torque);
    std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

fn wrap(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle;
    while a > PI {
        a -= two_pi;
    }
    while a < -PI {
        a += two_pi;
    }
    a
}

/// Height of the free end above the pivot, in link lengths.
pub fn tip_height(s: &Angles) -> f64 {
    -s[0].cos() - (s[0] + s[1]).cos()
}

/// Total mechanical energy (kinetic plus potential, pivot at zero height).
pub fn energy(s: &Angles) -> f64 {
    let (m1, m2, l1, lc1, lc2, i1, i2, g) =
        (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2, LINK_MOI, LINK_MOI, GRAVITY);
    let [t1, t2, dt1, dt2] = *s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + i2;
    let d3 = m2 * lc2 * lc2 + i2;
    let kinetic = 0.5 * (d1 * dt1 * dt1 + 2.0 * d2 * dt1 * dt2 + d3 * dt2 * dt2);
    let potential = -m1 * g * lc1 * t1.cos() - m2 * g * (l1 * t1.cos() + lc2 * (t1 + t2).cos());
    kinetic + potential
}

/// Actions `{0, 1, 2}` apply torque `{-1, 0, +1}`.
pub fn step(state: &[f64], action: usize) -> Result<StepOutcome, EnvError> {
    if action > 2 {
        return Err(EnvError::Action { action, count: 3 });
    }
    let s = from_observation(state)?;
    let torque = action as f64 - 1.0;
    let mut ns = rk4(&s, torque, DT);
    ns[0] = wrap(ns[0]);
    ns[1] = wrap(ns[1]);
    ns[2] = ns[2].clamp(-MAX_VEL_1, MAX_VEL_1);
    ns[3] = ns[3].clamp(-MAX_VEL_2, MAX_VEL_2);
    let terminated = tip_height(&ns) > 1.0;
    Ok(StepOutcome {
        next_state: to_observation(&ns),
        reward: if terminated { 0.0 } else { -1.0 },
        terminated,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanging_rest_is_an_equilibrium() {
        let rest = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let out = step(&rest, 1).unwrap();
        assert_eq!(out.next_state, rest.to_vec());
        assert!(!out.terminated);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn raised_tip_terminates() {
        let up = to_observation(&[PI, 0.0, 0.0, 0.0]);
        assert!((tip_height(&[PI, 0.0, 0.0, 0.0]) - 2.0).abs() < 1e-12);
        let out = step(&up, 1).unwrap();
        assert!(out.terminated);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn free_motion_does_not_gain_energy() {
        // RK4 at this step size is dissipative for small swings only. From
        // rest at |θ| ≤ 0.5 it gains up to ~5e-4 per step, at |θ| ≤ 1 ~0.06.
        let starts: [Angles; 4] = [
            [0.15, -0.1, 0.0, 0.0],
            [0.1, 0.05, 0.1, -0.1],
            [-0.07, 0.12, 0.1, 0.2],
            [0.01, 0.01, -0.05, 0.05],
        ];
        for s0 in starts {
            let mut obs = to_observation(&s0);
            for _ in 0..50 {
                let e0 = energy(&from_observation(&obs).unwrap());
                let out = step(&obs, 1).unwrap();
                let e1 = energy(&from_observation(&out.next_state).unwrap());
                assert!(e1 <= e0 + 1e-6, "energy rose from {e0} to {e1}");
                obs = out.next_state;
            }
        }
    }

    #[test]
    fn observations_stay_on_circle() {
        let mut obs = to_observation(&[0.3, 0.2, 0.0, 0.0]);
        for k in 0..200 {
            obs = step(&obs, k % 3).unwrap().next_state;
            assert!((obs[0] * obs[0] + obs[1] * obs[1] - 1.0).abs() < 1e-9);
            assert!((obs[2] * obs[2] + obs[3] * obs[3] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_off_circle_state() {
        assert!(step(&[1.0, 0.1, 1.0, 0.0, 0.0, 0.0], 1).is_err());
        assert!(step(&[1.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3).is_err());
    }
}
