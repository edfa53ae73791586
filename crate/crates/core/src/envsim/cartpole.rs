//! Cart-pole with the classic benchmark constants.

use super::{EnvError, StepOutcome};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const DT: f64 = 0.02;
/// 12 degrees.
pub const ANGLE_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const POSITION_LIMIT: f64 = 2.4;

pub const LABELS: [&str; 4] = ["cart_position", "cart_velocity", "pole_angle", "pole_angular_velocity"];

/// One semi-implicit Euler step. Action 1 pushes toward +x.
pub fn step(state: &[f64], action: usize) -> Result<StepOutcome, EnvError> {
    super::check_state(state, 4)?;
    if action > 1 {
        return Err(EnvError::Action { action, count: 2 });
    }
    let [x, x_dot, theta, theta_dot] = [state[0], state[1], state[2], state[3]];
    let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
    let total_mass = CART_MASS + POLE_MASS;
    let pole_ml = POLE_MASS * HALF_LENGTH;
    let (sin, cos) = (theta.sin(), theta.cos());

    let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    let x_dot = x_dot + DT * x_acc;
    let x = x + DT * x_dot;
    let theta_dot = theta_dot + DT * theta_acc;
    let theta = theta + DT * theta_dot;

    let terminated = x.abs() > POSITION_LIMIT || theta.abs() > ANGLE_LIMIT;
    Ok(StepOutcome {
        next_state: vec![x, x_dot, theta, theta_dot],
        reward: 1.0,
        terminated,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_right_from_rest() {
        let out = step(&[0.0; 4], 1).unwrap();
        assert!(out.next_state[1] > 0.0);
        assert!(out.next_state[3] < 0.0);
        assert!(!out.terminated);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn tilted_pole_terminates() {
        for a in 0..2 {
            let out = step(&[0.0, 0.0, 0.25, 0.0], a).unwrap();
            assert!(out.terminated);
            assert_eq!(out.reward, 1.0);
        }
        assert!(step(&[2.45, 0.0, 0.0, 0.0], 0).unwrap().terminated);
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let s = [0.3, -0.7, 0.05, 0.4];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        for a in 0..2 {
            let fwd = step(&s, a).unwrap().next_state;
            let mir = step(&neg, 1 - a).unwrap().next_state;
            for (p, m) in fwd.iter().zip(&mir) {
                assert_eq!(*p, -*m);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(step(&[0.0; 3], 0).is_err());
        assert!(step(&[0.0, f64::NAN, 0.0, 0.0], 0).is_err());
        assert!(step(&[0.0; 4], 2).is_err());
    }
}
