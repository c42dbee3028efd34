//! Two-loop PD flight controller.
//!
//! The outer loop turns position and velocity errors into an acceleration
//! demand, which the small-angle hover model maps to a thrust and a roll /
//! pitch setpoint. The inner loop turns attitude errors into body moments
//! that the inverse mixer allocates to rotors.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mix_inverse, wrap_angle, PhysicalParams, RigidState, RotorAllocation, Wrench};
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp_pos: Vector3<f64>,
    pub kd_pos: Vector3<f64>,
    pub kp_att: Vector3<f64>,
    pub kd_att: Vector3<f64>,
    /// Roll / pitch setpoint limit, rad.
    pub max_tilt: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp_pos: Vector3::new(4.0, 4.0, 8.0),
            kd_pos: Vector3::new(3.0, 3.0, 5.0),
            kp_att: Vector3::new(40.0, 40.0, 20.0),
            kd_att: Vector3::new(12.0, 12.0, 8.0),
            max_tilt: 0.5,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = self
            .kp_pos
            .iter()
            .chain(self.kd_pos.iter())
            .chain(self.kp_att.iter())
            .chain(self.kd_att.iter());
        for g in all {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(ConfigError::invalid("gains", format!("gain must be >= 0, got {g}")));
            }
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err(ConfigError::invalid(
                "gains",
                format!("max-tilt must lie in (0, π/2), got {}", self.max_tilt),
            ));
        }
        Ok(())
    }
}

/// Time-parameterized reference the controller tracks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
}

impl ReferenceSample {
    /// Zero-velocity hold at `position`.
    pub fn hold(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw,
        }
    }
}

/// Required change in acceleration (δa) from the position loop.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AccelCommand {
    pub delta_a: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttitudeSetpoint {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub thrust: f64,
}

pub fn accel_command(state: &RigidState, reference: &ReferenceSample, gains: &Gains) -> AccelCommand {
    let delta_a = reference.acceleration
        + gains.kd_pos.component_mul(&(reference.velocity - state.velocity))
        + gains.kp_pos.component_mul(&(reference.position - state.position));
    AccelCommand { delta_a }
}

pub fn position_control(
    state: &RigidState,
    reference: &ReferenceSample,
    gains: &Gains,
    params: &PhysicalParams,
) -> AttitudeSetpoint {
    let da = accel_command(state, reference, gains).delta_a;
    let g = params.gravity;
    let (sy, cy) = reference.yaw.sin_cos();
    let tilt = gains.max_tilt;
    AttitudeSetpoint {
        roll: ((da.x * sy - da.y * cy) / g).clamp(-tilt, tilt),
        pitch: ((da.x * cy + da.y * sy) / g).clamp(-tilt, tilt),
        yaw: reference.yaw,
        thrust: (params.mass * (g + da.z)).max(0.0),
    }
}

pub fn attitude_control(
    state: &RigidState,
    setpoint: &AttitudeSetpoint,
    gains: &Gains,
    params: &PhysicalParams,
) -> Wrench {
    let err = Vector3::new(
        setpoint.roll - state.attitude.roll,
        setpoint.pitch - state.attitude.pitch,
        wrap_angle(setpoint.yaw - state.attitude.yaw),
    );
    let demand = gains.kp_att.component_mul(&err) - gains.kd_att.component_mul(&state.body_rates);
    let moments = params.inertia.component_mul(&demand);
    Wrench {
        thrust: setpoint.thrust,
        roll: moments.x,
        pitch: moments.y,
        yaw: moments.z,
    }
}

/// Full controller pass: reference to rotor speed commands.
pub fn control_step(
    state: &RigidState,
    reference: &ReferenceSample,
    gains: &Gains,
    params: &PhysicalParams,
) -> RotorAllocation {
    let sp = position_control(state, reference, gains, params);
    let wrench = attitude_control(state, &sp, gains, params);
    mix_inverse(&wrench, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step, Attitude, Disturbance, RotorSpeeds, DEFAULT_DT};
    use approx::assert_relative_eq;

    fn unit_gains() -> Gains {
        Gains {
            kp_pos: Vector3::repeat(1.0),
            kd_pos: Vector3::repeat(1.0),
            ..Gains::default()
        }
    }

    #[test]
    fn hover_setpoint() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(1.0, 2.0, 3.0), 0.3);
        let sp = position_control(&state, &ReferenceSample::hold(state.position, 0.3), &Gains::default(), &p);
        assert_eq!(sp.roll, 0.0);
        assert_eq!(sp.pitch, 0.0);
        assert_eq!(sp.yaw, 0.3);
        assert_relative_eq!(sp.thrust, 4.905, epsilon = 1e-12);
    }

    #[test]
    fn target_ahead_pitches_forward() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 5.0), 0.0);
        let reference = ReferenceSample::hold(Vector3::new(1.0, 0.0, 5.0), 0.0);
        let sp = position_control(&state, &reference, &unit_gains(), &p);
        assert_relative_eq!(sp.pitch, 1.0 / 9.81, epsilon = 1e-15);
        assert_relative_eq!(sp.pitch, 0.10194, epsilon = 1e-5);
        assert_eq!(sp.roll, 0.0);
    }

    #[test]
    fn tilt_is_clamped() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 5.0), 0.0);
        let reference = ReferenceSample::hold(Vector3::new(50.0, -50.0, 5.0), 0.0);
        let sp = position_control(&state, &reference, &unit_gains(), &p);
        assert_eq!(sp.pitch, 0.5);
        assert_eq!(sp.roll, 0.5);
    }

    #[test]
    fn negative_thrust_clamps_to_zero() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 50.0), 0.0);
        let reference = ReferenceSample::hold(Vector3::new(0.0, 0.0, 0.0), 0.0);
        let sp = position_control(&state, &reference, &Gains::default(), &p);
        assert_eq!(sp.thrust, 0.0);
    }

    #[test]
    fn zero_attitude_error_zero_moments() {
        let p = PhysicalParams::default();
        let mut state = RigidState::at_rest(Vector3::zeros(), 0.2);
        state.attitude = Attitude::new(0.1, -0.05, 0.2);
        let sp = AttitudeSetpoint {
            roll: 0.1,
            pitch: -0.05,
            yaw: 0.2,
            thrust: 3.0,
        };
        let w = attitude_control(&state, &sp, &Gains::default(), &p);
        assert_eq!(w, Wrench::new(3.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn yaw_error_wraps() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::zeros(), 3.0);
        let sp = AttitudeSetpoint {
            yaw: -3.0,
            thrust: 4.905,
            ..Default::default()
        };
        let w = attitude_control(&state, &sp, &Gains::default(), &p);
        let err = 2.0 * std::f64::consts::PI - 6.0;
        assert_relative_eq!(err, 0.28319, epsilon = 1e-5);
        assert_relative_eq!(w.yaw, 4.0e-3 * 20.0 * err, epsilon = 1e-15);
        assert!(w.yaw > 0.0);
    }

    #[test]
    fn pitch_rate_is_damped() {
        let p = PhysicalParams::default();
        let mut state = RigidState::at_rest(Vector3::zeros(), 0.0);
        state.body_rates = Vector3::new(0.0, 0.4, 0.0);
        let w = attitude_control(&state, &AttitudeSetpoint::default(), &Gains::default(), &p);
        assert!(w.pitch < 0.0);
        assert_eq!(w.roll, 0.0);
    }

    #[test]
    fn hover_reference_commands_hover_speed() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        let alloc = control_step(&state, &ReferenceSample::hold(state.position, 0.0), &Gains::default(), &p);
        for w in alloc.speeds.0 {
            assert_relative_eq!(w, p.hover_speed(), max_relative = 1e-12);
        }
    }

    #[test]
    fn reference_above_spins_up_uniformly() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        let reference = ReferenceSample::hold(Vector3::new(0.0, 0.0, 11.0), 0.0);
        let s = control_step(&state, &reference, &Gains::default(), &p).speeds.0;
        assert!(s.iter().all(|w| *w == s[0]));
        assert!(s[0] > p.hover_speed());
    }

    #[test]
    fn reference_ahead_slows_front_rotor() {
        let p = PhysicalParams::default();
        let state = RigidState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        let reference = ReferenceSample::hold(Vector3::new(2.0, 0.0, 10.0), 0.0);
        let s = control_step(&state, &reference, &Gains::default(), &p).speeds.0;
        assert!(s[0] < s[2]);
        assert_relative_eq!(s[1], s[3]);
    }

    #[test]
    fn hover_is_closed_loop_fixed_point() {
        let p = PhysicalParams::default();
        let g = Gains::default();
        let start = RigidState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        let reference = ReferenceSample::hold(start.position, 0.0);
        let mut state = start;
        let mut actual = RotorSpeeds::hover(&p);
        for _ in 0..600 {
            let cmd = control_step(&state, &reference, &g, &p).speeds;
            let (s, a) = step(&state, &cmd, &actual, &Disturbance::default(), &p, DEFAULT_DT).unwrap();
            state = s;
            actual = a;
        }
        assert!((state.position - start.position).norm() < 1e-9);
    }

    fn settle_time(target_offset: Vector3<f64>) -> (f64, f64) {
        let p = PhysicalParams::default();
        let g = Gains::default();
        let start = RigidState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        let reference = ReferenceSample::hold(start.position + target_offset, 0.0);
        let mut state = start;
        let mut actual = RotorSpeeds::hover(&p);
        let mut last_outside = 0.0;
        let mut max_tilt: f64 = 0.0;
        for i in 1..=(30 * 60) {
            let cmd = control_step(&state, &reference, &g, &p).speeds;
            let (s, a) = step(&state, &cmd, &actual, &Disturbance::default(), &p, DEFAULT_DT).unwrap();
            state = s;
            actual = a;
            max_tilt = max_tilt.max(state.attitude.roll.abs()).max(state.attitude.pitch.abs());
            if (state.position - reference.position).norm() >= 0.05 {
                last_outside = i as f64 * DEFAULT_DT;
            }
        }
        (last_outside, max_tilt)
    }

    #[test]
    fn five_metre_steps_settle_within_thirty_seconds() {
        for axis in 0..3 {
            let mut offset = Vector3::zeros();
            offset[axis] = 5.0;
            let (settled, tilt) = settle_time(offset);
            println!("axis {axis}: settled after {settled:.3} s, max tilt {tilt:.3}");
            assert!(settled < 30.0, "axis {axis} never settled");
            assert!(tilt < std::f64::consts::FRAC_PI_2);
        }
    }
}
