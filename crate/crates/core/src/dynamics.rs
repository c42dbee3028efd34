//! Rigid-body quadrotor model.
//!
//! Rotor speeds are in rpm, forces in newtons, moments in newton-metres. The
//! world frame is z-up; attitude is a ZYX (yaw, pitch, roll) Euler triple
//! mapping body to world. Rotors 1 and 3 sit on the body +x / -x arms and
//! spin opposite to rotors 2 and 4 on the +y / -y arms.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Default fixed timestep: one rendered frame at 60 Hz.
pub const DEFAULT_DT: f64 = 1.0 / 60.0;

/// Vertical speed above which a ground contact counts as a crash.
pub const CRASH_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// Rotor hub to body centre, m.
    pub arm_length: f64,
    /// N/rpm²
    pub thrust_coeff: f64,
    /// N·m/rpm²
    pub moment_coeff: f64,
    /// Principal moments (I_xx, I_yy, I_zz), kg·m².
    pub inertia: Vector3<f64>,
    /// First-order motor response rate, 1/s.
    pub motor_lag: f64,
    pub rotor_speed_min: f64,
    pub rotor_speed_max: f64,
}

impl Default for PhysicalParams {
    /// Hummingbird-class vehicle: 0.5 kg with battery.
    fn default() -> Self {
        Self {
            mass: 0.5,
            gravity: 9.81,
            arm_length: 0.20,
            thrust_coeff: 6.11e-8,
            moment_coeff: 1.5e-9,
            inertia: Vector3::new(2.32e-3, 2.32e-3, 4.00e-3),
            motor_lag: 20.0,
            rotor_speed_min: 1200.0,
            rotor_speed_max: 7800.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("arm-length", self.arm_length),
            ("thrust-coeff", self.thrust_coeff),
            ("moment-coeff", self.moment_coeff),
            ("ixx", self.inertia.x),
            ("iyy", self.inertia.y),
            ("izz", self.inertia.z),
            ("motor-lag", self.motor_lag),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::invalid("physics", format!("{name} must be > 0, got {value}")));
            }
        }
        if !(self.rotor_speed_min >= 0.0
            && self.rotor_speed_max.is_finite()
            && self.rotor_speed_min < self.rotor_speed_max)
        {
            return Err(ConfigError::invalid(
                "physics",
                format!(
                    "rotor limits must satisfy 0 <= min < max, got [{}, {}]",
                    self.rotor_speed_min, self.rotor_speed_max
                ),
            ));
        }
        Ok(())
    }

    /// Rotor speed at which four rotors exactly carry the vehicle's weight.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.thrust_coeff)).sqrt()
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Roll, pitch and yaw in radians.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn level(yaw: f64) -> Self {
        Self { roll: 0.0, pitch: 0.0, yaw }
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Attitude,
    /// Body rates (p, q, r), rad/s.
    pub body_rates: Vector3<f64>,
}

impl RigidState {
    pub fn at_rest(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Attitude::level(yaw),
            body_rates: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.body_rates.iter().all(|v| v.is_finite())
            && self.attitude.is_finite()
    }
}

/// Rotor angular speeds Ω₁..Ω₄ in rpm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotorSpeeds(pub [f64; 4]);

impl RotorSpeeds {
    pub fn uniform(omega: f64) -> Self {
        Self([omega; 4])
    }

    pub fn hover(params: &PhysicalParams) -> Self {
        Self::uniform(params.hover_speed())
    }
}

/// Collective thrust along body z plus roll, pitch and yaw moments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Wrench {
    pub fn new(thrust: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { thrust, roll, pitch, yaw }
    }

    pub fn moments(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }
}

/// Constant world-frame force acting on the airframe (wind, jet-wash).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: Vector3<f64>,
}

impl Disturbance {
    pub fn new(force: Vector3<f64>) -> Self {
        Self { force }
    }
}

/// Output of the inverse mixer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorAllocation {
    pub speeds: RotorSpeeds,
    /// At least one rotor hit a speed limit.
    pub saturated: bool,
}

/// Raised when integration leaves the finite domain.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("non-finite rigid-body state after integration")]
pub struct DynamicsFault;

pub fn mix_forward(omegas: &RotorSpeeds, params: &PhysicalParams) -> Wrench {
    let sq = omegas.0.map(|w| w * w);
    let f = sq.map(|s| params.thrust_coeff * s);
    let m = sq.map(|s| params.moment_coeff * s);
    Wrench {
        thrust: f[0] + f[1] + f[2] + f[3],
        roll: params.arm_length * (f[1] - f[3]),
        pitch: params.arm_length * (f[2] - f[0]),
        yaw: m[0] - m[1] + m[2] - m[3],
    }
}

/// Solves the mixer for squared rotor speeds and clamps each rotor into its
/// speed range.
pub fn mix_inverse(desired: &Wrench, params: &PhysicalParams) -> RotorAllocation {
    let collective = desired.thrust / params.thrust_coeff;
    let roll = desired.roll / (params.arm_length * params.thrust_coeff);
    let pitch = desired.pitch / (params.arm_length * params.thrust_coeff);
    let yaw = desired.yaw / params.moment_coeff;

    // s1 + s3 and s2 + s4 split the collective by the yaw demand.
    let odd = 0.5 * (collective + yaw);
    let even = 0.5 * (collective - yaw);
    let squared = [
        0.5 * (odd - pitch),
        0.5 * (even + roll),
        0.5 * (odd + pitch),
        0.5 * (even - roll),
    ];

    let lo = params.rotor_speed_min * params.rotor_speed_min;
    let hi = params.rotor_speed_max * params.rotor_speed_max;
    let mut saturated = false;
    let speeds = squared.map(|s| {
        let clamped = if s.is_nan() { lo } else { s.clamp(lo, hi) };
        if clamped != s {
            saturated = true;
        }
        clamped.sqrt()
    });
    RotorAllocation {
        speeds: RotorSpeeds(speeds),
        saturated,
    }
}

/// Body-to-world rotation for ZYX Euler angles.
pub fn rotation_matrix(attitude: &Attitude) -> Matrix3<f64> {
    let (sr, cr) = attitude.roll.sin_cos();
    let (sp, cp) = attitude.pitch.sin_cos();
    let (sy, cy) = attitude.yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Euler angle rates from body rates (ZYX kinematics).
fn euler_rates(attitude: &Attitude, rates: &Vector3<f64>) -> Vector3<f64> {
    let (sr, cr) = attitude.roll.sin_cos();
    let (p, q, r) = (rates.x, rates.y, rates.z);
    let cp = attitude.pitch.cos();
    let tp = attitude.pitch.tan();
    let coupled = q * sr + r * cr;
    Vector3::new(p + coupled * tp, q * cr - r * sr, coupled / cp)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = angle % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Advances one fixed step.
///
/// Motor speeds first relax toward the command, then the wrench from the
/// lagged speeds drives a semi-implicit Euler update: velocities and body
/// rates are integrated first, positions and angles follow using the new
/// values.
pub fn step(
    state: &RigidState,
    commanded: &RotorSpeeds,
    actual: &RotorSpeeds,
    dist: &Disturbance,
    params: &PhysicalParams,
    dt: f64,
) -> Result<(RigidState, RotorSpeeds), DynamicsFault> {
    debug_assert!(dt > 0.0);
    let blend = params.motor_lag * dt;
    let lagged = RotorSpeeds(std::array::from_fn(|i| {
        actual.0[i] + blend * (commanded.0[i] - actual.0[i])
    }));
    let wrench = mix_forward(&lagged, params);

    let rot = rotation_matrix(&state.attitude);
    let thrust_world = rot * Vector3::new(0.0, 0.0, wrench.thrust);
    let net_force = thrust_world - Vector3::new(0.0, 0.0, params.weight()) + dist.force;
    let accel = net_force / params.mass;

    let omega = state.body_rates;
    let inertia = params.inertia;
    let angular_momentum = inertia.component_mul(&omega);
    let gyroscopic = omega.cross(&angular_momentum);
    let angular_accel = (wrench.moments() - gyroscopic).component_div(&inertia);

    let velocity = state.velocity + accel * dt;
    let body_rates = omega + angular_accel * dt;
    let position = state.position + velocity * dt;
    let angle_rates = euler_rates(&state.attitude, &body_rates);
    let attitude = Attitude {
        roll: state.attitude.roll + angle_rates.x * dt,
        pitch: state.attitude.pitch + angle_rates.y * dt,
        yaw: wrap_angle(state.attitude.yaw + angle_rates.z * dt),
    };

    let next = RigidState {
        position,
        velocity,
        attitude,
        body_rates,
    };
    if next.is_finite() && lagged.0.iter().all(|w| w.is_finite()) {
        Ok((next, lagged))
    } else {
        Err(DynamicsFault)
    }
}
