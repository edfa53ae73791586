//! Simplified planar lander.
//!
//! A rigid body with a main engine along its body axis and two side
//! thrusters. `y` is the height of the leg base line; a leg is in contact
//! when its tip is at or below the ground. While in contact the legs act as
//! a spring-damper, so a soft touchdown settles over several steps before
//! the episode ends.
//!
//! State: `[x, y, ẋ, ẏ, angle, angular velocity, left contact, right contact]`.

use super::{EnvError, StepOutcome};

pub const DT: f64 = 0.02;
pub const GRAVITY: f64 = 1.6;
/// Main engine acceleration along the body axis.
pub const MAIN_ACCEL: f64 = 3.2;
pub const SIDE_ANGULAR_ACCEL: f64 = 1.5;
pub const SIDE_LATERAL_ACCEL: f64 = 0.3;
/// Horizontal distance from the body centre to each leg tip.
pub const LEG_HALF_SPAN: f64 = 0.2;
pub const CRASH_SPEED: f64 = 1.0;
pub const UPRIGHT_LIMIT: f64 = 0.3;
pub const PAD_HALF_WIDTH: f64 = 0.4;
pub const X_LIMIT: f64 = 1.5;

pub const LEG_STIFFNESS: f64 = 25.0;
pub const LEG_DAMPING: f64 = 4.0;
pub const GROUND_FRICTION: f64 = 5.0;
pub const GROUND_ROT_STIFFNESS: f64 = 25.0;
pub const GROUND_ROT_DAMPING: f64 = 10.0;
/// Speeds and offsets below this count as "at rest" on the legs. Tight on
/// purpose: the lander sits on its legs for a while before the episode ends.
pub const REST_TOL: f64 = 1e-6;

pub const MAIN_FUEL_COST: f64 = 0.03;
pub const SIDE_FUEL_COST: f64 = 0.003;
pub const LANDING_BONUS: f64 = 100.0;
pub const CRASH_PENALTY: f64 = -100.0;

pub const LABELS: [&str; 8] = [
    "x",
    "y",
    "x_dot",
    "y_dot",
    "angle",
    "angular_velocity",
    "left_contact",
    "right_contact",
];

/// Equilibrium leg compression under gravity.
pub fn rest_height() -> f64 {
    -GRAVITY / LEG_STIFFNESS
}

fn potential(s: &[f64]) -> f64 {
    -100.0 * s[0].hypot(s[1]) - 100.0 * s[2].hypot(s[3]) - 100.0 * s[4].abs()
}

fn leg_heights(y: f64, angle: f64) -> (f64, f64) {
    let dy = LEG_HALF_SPAN * angle.sin();
    (y - dy, y + dy)
}

/// Actions: 0 nothing, 1 left thruster, 2 main engine, 3 right thruster.
pub fn step(state: &[f64], action: usize) -> Result<StepOutcome, EnvError> {
    super::check_state(state, 8)?;
    if action > 3 {
        return Err(EnvError::Action { action, count: 4 });
    }
    let [x, y, vx, vy, angle, omega] = [state[0], state[1], state[2], state[3], state[4], state[5]];
    let was_in_contact = state[6] > 0.5 || state[7] > 0.5;

    let (mut ax, mut ay, mut alpha) = (0.0, -GRAVITY, 0.0);
    let mut fuel = 0.0;
    match action {
        2 => {
            ax -= angle.sin() * MAIN_ACCEL;
            ay += angle.cos() * MAIN_ACCEL;
            fuel = MAIN_FUEL_COST;
        }
        1 | 3 => {
            let dir = if action == 1 { 1.0 } else { -1.0 };
            alpha -= dir * SIDE_ANGULAR_ACCEL;
            ax += dir * angle.cos() * SIDE_LATERAL_ACCEL;
            ay += dir * angle.sin() * SIDE_LATERAL_ACCEL;
            fuel = SIDE_FUEL_COST;
        }
        _ => {}
    }
    if was_in_contact {
        ay += -LEG_STIFFNESS * y.min(0.0) - LEG_DAMPING * vy;
        ax -= GROUND_FRICTION * vx;
        alpha += -GROUND_ROT_STIFFNESS * angle - GROUND_ROT_DAMPING * omega;
    }

    let vx = vx + DT * ax;
    let vy = vy + DT * ay;
    let omega = omega + DT * alpha;
    let x = x + DT * vx;
    let y = y + DT * vy;
    let angle = angle + DT * omega;

    let (hl, hr) = leg_heights(y, angle);
    let touching = hl <= 0.0 || hr <= 0.0;
    let mut next = vec![x, y, vx, vy, angle, omega, 0.0, 0.0];
    let mut reward = potential(&next) - potential(state) - fuel;
    let mut terminated = false;

    if touching && !was_in_contact && (vy.abs() >= CRASH_SPEED || angle.abs() > UPRIGHT_LIMIT) {
        reward += CRASH_PENALTY;
        terminated = true;
    } else if touching || (was_in_contact && y <= 0.0) {
        next[6] = f64::from(u8::from(hl <= 0.0));
        next[7] = f64::from(u8::from(hr <= 0.0));
        let at_rest = next[6] > 0.5
            && next[7] > 0.5
            && vy.abs() < REST_TOL
            && vx.abs() < REST_TOL
            && omega.abs() < REST_TOL
            && (y - rest_height()).abs() < REST_TOL;
        if at_rest {
            terminated = true;
            if x.abs() <= PAD_HALF_WIDTH && angle.abs() <= UPRIGHT_LIMIT {
                reward += LANDING_BONUS;
            }
        }
    }
    if !terminated && x.abs() > X_LIMIT {
        reward += CRASH_PENALTY;
        terminated = true;
    }

    Ok(StepOutcome {
        next_state: next,
        reward,
        terminated,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_fall_kinematics() {
        let mut s = vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for k in 1..=20 {
            s = step(&s, 0).unwrap().next_state;
            assert!((s[3] - (-GRAVITY * DT * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_thrust_keeps_horizontal_velocity() {
        let mut s = vec![0.1, 1.0, 0.37, -0.1, 0.05, 0.02, 0.0, 0.0];
        for _ in 0..30 {
            let next = step(&s, 0).unwrap().next_state;
            assert_eq!(next[2], s[2]);
            s = next;
        }
    }

    fn settle(mut s: Vec<f64>) -> (f64, bool, usize) {
        let mut total = 0.0;
        for k in 0..2000 {
            let out = step(&s, 0).unwrap();
            total += out.reward;
            if out.terminated {
                return (out.reward, true, k + 1);
            }
            s = out.next_state;
        }
        (total, false, 2000)
    }

    #[test]
    fn soft_touchdown_lands_with_bonus() {
        let (last, done, steps) = settle(vec![0.0, 0.001, 0.0, -0.2, 0.0, 0.0, 0.0, 0.0]);
        assert!(done);
        assert!(last > 90.0, "terminal reward {last}");
        assert!(steps > 20, "settled after {steps} steps");
    }

    #[test]
    fn hard_touchdown_crashes() {
        let out = step(&[0.0, 0.001, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(out.terminated);
        assert!(out.reward < -90.0);
        assert_eq!(&out.next_state[6..], &[0.0, 0.0]);
    }

    #[test]
    fn contact_flags_set_on_soft_touchdown() {
        let out = step(&[0.0, 0.001, 0.0, -0.2, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(!out.terminated);
        assert_eq!(&out.next_state[6..], &[1.0, 1.0]);
    }

    #[test]
    fn engines_and_fuel() {
        let s = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let main = step(&s, 2).unwrap();
        assert!(main.next_state[3] > 0.0);
        let left = step(&s, 1).unwrap();
        assert!(left.next_state[5] < 0.0 && left.next_state[2] > 0.0);
        let right = step(&s, 3).unwrap();
        assert!(right.next_state[5] > 0.0 && right.next_state[2] < 0.0);
        assert!(step(&s, 4).is_err());
    }
}
