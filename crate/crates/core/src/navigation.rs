//! Waypoint navigation: trapezoidal straight-line segments, operator
//! command semantics per autonomy level, direct flight control and the
//! per-UAV waypoint queue.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::ReferenceSample;
use crate::dynamics::{wrap_angle, RigidState};
use crate::error::ConfigError;

/// Segments shorter than this are treated as already arrived.
const MIN_SEGMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigatorLimits {
    /// m/s
    pub v_max: f64,
    /// m/s²
    pub a_max: f64,
    pub arrival_radius: f64,
    /// Residual speed below which a waypoint counts as reached, m/s.
    pub arrival_speed: f64,
    pub min_altitude: f64,
    /// Yaw-rate reference for direct control, rad/s.
    pub yaw_rate: f64,
    /// Mission yaw held by the position loop, rad.
    pub mission_yaw: f64,
    /// Descent speed for forced landings, m/s.
    pub landing_speed: f64,
}

impl Default for NavigatorLimits {
    fn default() -> Self {
        Self {
            v_max: 5.0,
            a_max: 2.0,
            arrival_radius: 0.5,
            arrival_speed: 0.25,
            min_altitude: 1.0,
            yaw_rate: 0.5,
            mission_yaw: 0.0,
            landing_speed: 0.5,
        }
    }
}

impl NavigatorLimits {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("v-max", self.v_max),
            ("a-max", self.a_max),
            ("arrival-radius", self.arrival_radius),
            ("arrival-speed", self.arrival_speed),
            ("landing-speed", self.landing_speed),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::invalid("navigator", format!("{name} must be > 0, got {value}")));
            }
        }
        if !(self.min_altitude.is_finite() && self.min_altitude >= 0.0) {
            return Err(ConfigError::invalid("navigator", "min-altitude must be >= 0"));
        }
        if !(self.yaw_rate.is_finite() && self.yaw_rate >= 0.0) || !self.mission_yaw.is_finite() {
            return Err(ConfigError::invalid("navigator", "yaw settings must be finite and yaw-rate >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// Trapezoidal speed profile along a straight segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub t_accel: f64,
    pub t_cruise: f64,
    pub t_decel: f64,
    pub v_peak: f64,
    pub accel: f64,
}

impl SpeedProfile {
    /// Rest-to-rest profile covering `distance`; triangular when the segment
    /// is too short to reach `v_max`.
    pub fn rest_to_rest(distance: f64, v_max: f64, a_max: f64) -> Self {
        if distance < MIN_SEGMENT {
            return Self::default();
        }
        if distance >= v_max * v_max / a_max {
            let t_ramp = v_max / a_max;
            Self {
                t_accel: t_ramp,
                t_cruise: (distance - v_max * t_ramp) / v_max,
                t_decel: t_ramp,
                v_peak: v_max,
                accel: a_max,
            }
        } else {
            let v_peak = (distance * a_max).sqrt();
            let t_ramp = v_peak / a_max;
            Self {
                t_accel: t_ramp,
                t_cruise: 0.0,
                t_decel: t_ramp,
                v_peak,
                accel: a_max,
            }
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_accel + self.t_cruise + self.t_decel
    }

    /// Distance, speed and signed acceleration along the segment at `tau`
    /// seconds into the profile.
    pub fn at(&self, tau: f64, distance: f64) -> (f64, f64, f64) {
        let total = self.duration();
        if tau <= 0.0 {
            (0.0, 0.0, if total > 0.0 { self.accel } else { 0.0 })
        } else if tau < self.t_accel {
            (0.5 * self.accel * tau * tau, self.accel * tau, self.accel)
        } else if tau < self.t_accel + self.t_cruise {
            let ramp = 0.5 * self.accel * self.t_accel * self.t_accel;
            (ramp + self.v_peak * (tau - self.t_accel), self.v_peak, 0.0)
        } else if tau < total {
            let left = total - tau;
            (distance - 0.5 * self.accel * left * left, self.accel * left, -self.accel)
        } else {
            (distance, 0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub start: Vector3<f64>,
    pub goal: Waypoint,
    pub direction: Vector3<f64>,
    pub distance: f64,
    pub profile: SpeedProfile,
    pub start_time: f64,
}

impl TrajectoryPlan {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.profile.duration()
    }

    pub fn is_hover(&self) -> bool {
        self.distance < MIN_SEGMENT
    }
}

/// Position, velocity and acceleration drawn from a plan.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlanSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl PlanSample {
    pub fn with_yaw(self, yaw: f64) -> ReferenceSample {
        ReferenceSample {
            position: self.position,
            velocity: self.velocity,
            acceleration: self.acceleration,
            yaw,
        }
    }
}

pub fn plan_segment(from: &RigidState, to: Waypoint, v_max: f64, a_max: f64, t0: f64) -> TrajectoryPlan {
    let delta = to.position - from.position;
    let distance = delta.norm();
    let direction = if distance < MIN_SEGMENT { Vector3::zeros() } else { delta / distance };
    TrajectoryPlan {
        start: from.position,
        goal: to,
        direction,
        distance,
        profile: SpeedProfile::rest_to_rest(distance, v_max, a_max),
        start_time: t0,
    }
}

pub fn sample(plan: &TrajectoryPlan, t: f64) -> PlanSample {
    if plan.is_hover() || t >= plan.end_time() {
        return PlanSample {
            position: plan.goal.position,
            ..PlanSample::default()
        };
    }
    let (s, v, a) = plan.profile.at(t - plan.start_time, plan.distance);
    PlanSample {
        position: plan.start + plan.direction * s,
        velocity: plan.direction * v,
        acceleration: plan.direction * a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AutonomyLevel {
    /// Direct flight control of a single UAV.
    Direct = 1,
    /// Direct control or a single destination waypoint.
    Destination = 2,
    /// Sequential waypoint queues.
    Sequence = 3,
}

impl AutonomyLevel {
    pub const ALL: [AutonomyLevel; 3] = [Self::Direct, Self::Destination, Self::Sequence];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for AutonomyLevel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Self::Direct),
            2 => Ok(Self::Destination),
            3 => Ok(Self::Sequence),
            other => Err(format!("autonomy level must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<AutonomyLevel> for u8 {
    fn from(level: AutonomyLevel) -> u8 {
        level.number()
    }
}

/// A discrete stick position: -1, 0 or +1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Detent {
    Negative,
    #[default]
    Centre,
    Positive,
}

impl Detent {
    pub fn value(self) -> f64 {
        match self {
            Self::Negative => -1.0,
            Self::Centre => 0.0,
            Self::Positive => 1.0,
        }
    }
}

impl TryFrom<i8> for Detent {
    type Error = String;

    fn try_from(value: i8) -> Result<Self, Self::Error> {
        match value {
            -1 => Ok(Self::Negative),
            0 => Ok(Self::Centre),
            1 => Ok(Self::Positive),
            other => Err(format!("stick value must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Detent> for i8 {
    fn from(d: Detent) -> i8 {
        d.value() as i8
    }
}

/// Held direct-control input: altitude, forward/back, turn, sideways.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectControlInput {
    pub throttle: Detent,
    pub surge: Detent,
    pub yaw: Detent,
    pub slew: Detent,
}

impl DirectControlInput {
    pub fn is_neutral(&self) -> bool {
        *self == Self::default()
    }
}

/// Navigation-affecting operator commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NavCommand {
    Direct(DirectControlInput),
    SetWaypoint(Waypoint),
    AppendWaypoint(Waypoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    LevelForbidden,
    MultiSelectForbidden,
    UnknownUav,
    UnknownEntity,
    NotVisible,
    AlreadyTagged,
    BelowMinAltitude,
    OutOfBounds,
    InvalidSpeedScale,
    UavUnavailable,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            Self::LevelForbidden => "level-forbidden",
            Self::MultiSelectForbidden => "multi-select-forbidden",
            Self::UnknownUav => "unknown-uav",
            Self::UnknownEntity => "unknown-entity",
            Self::NotVisible => "not-visible",
            Self::AlreadyTagged => "already-tagged",
            Self::BelowMinAltitude => "below-min-altitude",
            Self::OutOfBounds => "out-of-bounds",
            Self::InvalidSpeedScale => "invalid-speed-scale",
            Self::UavUnavailable => "uav-unavailable",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Result of an accepted navigation command.
#[derive(Debug, Clone, PartialEq)]
pub enum NavUpdate {
    /// Switch to (or stay in) direct control; the queue is dropped.
    Direct(DirectControlInput),
    Queue(VecDeque<Waypoint>),
}

/// Applies the autonomy-level rules to one UAV's queue.
///
/// `selected` is the number of UAVs the command addresses; level 1 only
/// allows a single UAV.
pub fn apply_autonomy(
    level: AutonomyLevel,
    cmd: &NavCommand,
    selected: usize,
    queue: &VecDeque<Waypoint>,
) -> Result<NavUpdate, RejectReason> {
    if level == AutonomyLevel::Direct && selected > 1 {
        return Err(RejectReason::MultiSelectForbidden);
    }
    match (level, cmd) {
        (_, NavCommand::Direct(input)) => Ok(NavUpdate::Direct(*input)),
        (AutonomyLevel::Direct, _) => Err(RejectReason::LevelForbidden),
        (_, NavCommand::SetWaypoint(wp)) => Ok(NavUpdate::Queue(VecDeque::from([*wp]))),
        (AutonomyLevel::Destination, NavCommand::AppendWaypoint(_)) => Err(RejectReason::LevelForbidden),
        (AutonomyLevel::Sequence, NavCommand::AppendWaypoint(wp)) => {
            let mut next = queue.clone();
            next.push_back(*wp);
            Ok(NavUpdate::Queue(next))
        }
    }
}

/// World velocity requested by a direct-control input, in the frame of the
/// reference yaw. `speed` is the already-scaled maximum speed.
pub fn direct_velocity(input: &DirectControlInput, yaw: f64, speed: f64) -> Vector3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let forward = input.surge.value() * speed;
    let left = input.slew.value() * speed;
    Vector3::new(
        forward * cy - left * sy,
        forward * sy + left * cy,
        input.throttle.value() * speed,
    )
}

/// Integrated reference pose for direct flight control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectHold {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl DirectHold {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self { position, yaw }
    }

    /// Reference for this tick, then integrates the commanded velocity and
    /// yaw rate over `dt`. The reference never goes below ground level.
    pub fn advance(&mut self, input: &DirectControlInput, speed: f64, yaw_rate: f64, dt: f64) -> ReferenceSample {
        let velocity = direct_velocity(input, self.yaw, speed);
        let mut reference = ReferenceSample {
            position: self.position,
            velocity,
            acceleration: Vector3::zeros(),
            yaw: self.yaw,
        };
        self.position += velocity * dt;
        if self.position.z <= 0.0 {
            self.position.z = 0.0;
            reference.velocity.z = reference.velocity.z.max(0.0);
        }
        self.yaw = wrap_angle(self.yaw + input.yaw.value() * yaw_rate * dt);
        reference
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NavMode {
    Waypoints,
    Direct { input: DirectControlInput, hold: DirectHold },
    Landing { position: Vector3<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NavEvent {
    WaypointReached(Waypoint),
}

/// Per-UAV navigation state owned by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Navigator {
    queue: VecDeque<Waypoint>,
    plan: Option<TrajectoryPlan>,
    /// Mission clock; frozen while paused.
    clock: f64,
    mode: NavMode,
    hold: Vector3<f64>,
    yaw: f64,
    paused: bool,
    speed_scale: f64,
}

impl Navigator {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            queue: VecDeque::new(),
            plan: None,
            clock: 0.0,
            mode: NavMode::Waypoints,
            hold: position,
            yaw,
            paused: false,
            speed_scale: 1.0,
        }
    }

    pub fn queue(&self) -> &VecDeque<Waypoint> {
        &self.queue
    }

    pub fn plan(&self) -> Option<&TrajectoryPlan> {
        self.plan.as_ref()
    }

    pub fn mode(&self) -> &NavMode {
        &self.mode
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn speed_scale(&self) -> f64 {
        self.speed_scale
    }

    pub fn yaw(&self) -> f64 {
        match &self.mode {
            NavMode::Direct { hold, .. } => hold.yaw,
            _ => self.yaw,
        }
    }

    pub fn is_landing(&self) -> bool {
        matches!(self.mode, NavMode::Landing { .. })
    }

    pub fn set_speed_scale(&mut self, scale: f64) {
        self.speed_scale = scale;
    }

    /// Changes the speed scale and re-plans the active segment from `state`.
    pub fn rescale(&mut self, scale: f64, state: &RigidState, limits: &NavigatorLimits) {
        self.speed_scale = scale;
        if self.plan.take().is_some() {
            self.replan_if_needed(state, limits);
        }
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    /// Applies an accepted autonomy update.
    pub fn apply(&mut self, update: NavUpdate, state: &RigidState, limits: &NavigatorLimits) {
        match update {
            NavUpdate::Direct(input) => {
                let hold = match self.mode {
                    NavMode::Direct { hold, .. } => hold,
                    _ => DirectHold::new(state.position, self.yaw()),
                };
                self.queue.clear();
                self.plan = None;
                self.mode = NavMode::Direct { input, hold };
            }
            NavUpdate::Queue(queue) => {
                if let NavMode::Direct { hold, .. } = self.mode {
                    self.yaw = hold.yaw;
                    self.hold = hold.position;
                }
                self.mode = NavMode::Waypoints;
                self.queue = queue;
                self.replan_if_needed(state, limits);
            }
        }
    }

    /// Overrides everything with a vertical descent from the current spot.
    pub fn force_landing(&mut self, state: &RigidState) {
        self.queue.clear();
        self.plan = None;
        self.paused = false;
        self.mode = NavMode::Landing {
            position: state.position,
        };
    }

    /// Drops any mission and holds at `position` (used after touchdown).
    pub fn reset_hold(&mut self, position: Vector3<f64>) {
        self.queue.clear();
        self.plan = None;
        self.mode = NavMode::Waypoints;
        self.hold = position;
    }

    fn replan_if_needed(&mut self, state: &RigidState, limits: &NavigatorLimits) {
        match (self.queue.front(), &self.plan) {
            (Some(front), Some(plan)) if plan.goal.id == front.id => {}
            (Some(front), _) => {
                let speed = limits.v_max * self.speed_scale;
                self.plan = Some(plan_segment(state, *front, speed, limits.a_max, self.clock));
            }
            (None, Some(plan)) => {
                self.hold = plan.goal.position;
                self.plan = None;
            }
            (None, None) => {}
        }
    }

    /// Arrival detection: pops the queue and plans the next segment.
    pub fn advance(&mut self, state: &RigidState, limits: &NavigatorLimits) -> Vec<NavEvent> {
        let mut events = Vec::new();
        if self.mode != NavMode::Waypoints {
            return events;
        }
        if let Some(plan) = self.plan {
            let close = (state.position - plan.goal.position).norm() < limits.arrival_radius;
            let slow = state.velocity.norm() < limits.arrival_speed;
            if close && slow && self.clock >= plan.end_time() {
                self.queue.pop_front();
                self.hold = plan.goal.position;
                self.plan = None;
                events.push(NavEvent::WaypointReached(plan.goal));
            }
        }
        self.replan_if_needed(state, limits);
        events
    }

    /// Reference at the current mission clock, without advancing anything.
    pub fn planned(&self, limits: &NavigatorLimits) -> ReferenceSample {
        let speed = limits.v_max * self.speed_scale;
        match &self.mode {
            NavMode::Direct { input, hold } => ReferenceSample {
                position: hold.position,
                velocity: if self.paused {
                    Vector3::zeros()
                } else {
                    direct_velocity(input, hold.yaw, speed)
                },
                acceleration: Vector3::zeros(),
                yaw: hold.yaw,
            },
            NavMode::Landing { position } => ReferenceSample {
                position: *position,
                velocity: Vector3::new(0.0, 0.0, if position.z > 0.0 { -limits.landing_speed } else { 0.0 }),
                acceleration: Vector3::zeros(),
                yaw: self.yaw,
            },
            NavMode::Waypoints => match &self.plan {
                Some(plan) if self.paused => ReferenceSample::hold(sample(plan, self.clock).position, self.yaw),
                Some(plan) => sample(plan, self.clock).with_yaw(self.yaw),
                None => ReferenceSample::hold(self.hold, self.yaw),
            },
        }
    }

    /// Reference for this tick; advances the mission clock by `dt` unless
    /// paused.
    pub fn reference(&mut self, limits: &NavigatorLimits, dt: f64) -> ReferenceSample {
        let speed = limits.v_max * self.speed_scale;
        let paused = self.paused;
        let reference = match &mut self.mode {
            NavMode::Direct { input, hold } => {
                if paused {
                    ReferenceSample::hold(hold.position, hold.yaw)
                } else {
                    hold.advance(input, speed, limits.yaw_rate, dt)
                }
            }
            NavMode::Landing { position } => {
                let reference = ReferenceSample {
                    position: *position,
                    velocity: Vector3::new(0.0, 0.0, if position.z > 0.0 { -limits.landing_speed } else { 0.0 }),
                    acceleration: Vector3::zeros(),
                    yaw: self.yaw,
                };
                position.z = (position.z - limits.landing_speed * dt).max(0.0);
                reference
            }
            NavMode::Waypoints => match &self.plan {
                Some(plan) if paused => ReferenceSample::hold(sample(plan, self.clock).position, self.yaw),
                Some(plan) => sample(plan, self.clock).with_yaw(self.yaw),
                None => ReferenceSample::hold(self.hold, self.yaw),
            },
        };
        if !paused {
            self.clock += dt;
        }
        reference
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{control_step, Gains};
    use crate::dynamics::{step, Disturbance, PhysicalParams, RotorSpeeds, DEFAULT_DT};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wp(id: u64, x: f64, y: f64, z: f64) -> Waypoint {
        Waypoint {
            id,
            position: Vector3::new(x, y, z),
        }
    }

    fn at_origin() -> RigidState {
        RigidState::at_rest(Vector3::new(0.0, 0.0, 5.0), 0.0)
    }

    #[test]
    fn trapezoid_ten_metres() {
        let plan = plan_segment(&at_origin(), wp(1, 10.0, 0.0, 5.0), 2.0, 1.0, 0.0);
        assert_relative_eq!(plan.profile.t_accel, 2.0);
        assert_relative_eq!(plan.profile.t_cruise, 3.0);
        assert_relative_eq!(plan.profile.t_decel, 2.0);
        assert_relative_eq!(plan.profile.duration(), 7.0);
        assert_eq!(plan.profile.v_peak, 2.0);
    }

    #[test]
    fn triangle_one_metre() {
        let plan = plan_segment(&at_origin(), wp(1, 0.0, 1.0, 5.0), 2.0, 1.0, 0.0);
        assert_relative_eq!(plan.profile.v_peak, 1.0);
        assert_eq!(plan.profile.t_cruise, 0.0);
        assert_relative_eq!(plan.profile.duration(), 2.0);
    }

    #[test]
    fn zero_distance_is_hover() {
        let goal = wp(1, 0.0, 0.0, 5.0);
        let plan = plan_segment(&at_origin(), goal, 2.0, 1.0, 3.0);
        assert!(plan.is_hover());
        for t in [3.0, 3.5, 100.0] {
            let s = sample(&plan, t);
            assert_eq!(s.position, goal.position);
            assert_eq!(s.velocity, Vector3::zeros());
            assert_eq!(s.acceleration, Vector3::zeros());
        }
    }

    #[test]
    fn sample_endpoints_and_cruise() {
        let plan = plan_segment(&at_origin(), wp(1, 10.0, 0.0, 5.0), 2.0, 1.0, 1.0);
        assert_eq!(sample(&plan, 1.0).position, at_origin().position);
        let end = sample(&plan, 8.0);
        assert_eq!(end.position, Vector3::new(10.0, 0.0, 5.0));
        assert_eq!(end.velocity, Vector3::zeros());
        assert_eq!(sample(&plan, 4.5).velocity.norm(), 2.0);
        assert_eq!(sample(&plan, 40.0).position, Vector3::new(10.0, 0.0, 5.0));
    }

    #[test]
    fn autonomy_matrix() {
        let queue = VecDeque::from([wp(1, 0.0, 0.0, 5.0), wp(2, 1.0, 0.0, 5.0)]);
        let set = NavCommand::SetWaypoint(wp(3, 2.0, 0.0, 5.0));
        let append = NavCommand::AppendWaypoint(wp(3, 2.0, 0.0, 5.0));
        let direct = NavCommand::Direct(DirectControlInput::default());

        assert_eq!(
            apply_autonomy(AutonomyLevel::Direct, &set, 1, &queue),
            Err(RejectReason::LevelForbidden)
        );
        assert_eq!(
            apply_autonomy(AutonomyLevel::Direct, &append, 1, &queue),
            Err(RejectReason::LevelForbidden)
        );
        assert!(matches!(
            apply_autonomy(AutonomyLevel::Direct, &direct, 1, &queue),
            Ok(NavUpdate::Direct(_))
        ));
        assert_eq!(
            apply_autonomy(AutonomyLevel::Direct, &direct, 2, &queue),
            Err(RejectReason::MultiSelectForbidden)
        );
        match apply_autonomy(AutonomyLevel::Destination, &set, 1, &queue) {
            Ok(NavUpdate::Queue(q)) => assert_eq!(q.len(), 1),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            apply_autonomy(AutonomyLevel::Destination, &append, 1, &queue),
            Err(RejectReason::LevelForbidden)
        );
        assert!(apply_autonomy(AutonomyLevel::Destination, &direct, 3, &queue).is_ok());
    }

    #[test]
    fn level_three_appends_fifo() {
        let mut queue = VecDeque::new();
        for id in 1..=3 {
            let cmd = NavCommand::AppendWaypoint(wp(id, id as f64, 0.0, 5.0));
            match apply_autonomy(AutonomyLevel::Sequence, &cmd, 1, &queue).unwrap() {
                NavUpdate::Queue(q) => queue = q,
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(queue.iter().map(|w| w.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn neutral_direct_input_holds_pose() {
        let mut hold = DirectHold::new(Vector3::new(1.0, 2.0, 3.0), 0.0);
        for _ in 0..60 {
            let r = hold.advance(&DirectControlInput::default(), 5.0, 0.5, DEFAULT_DT);
            assert_eq!(r.position, Vector3::new(1.0, 2.0, 3.0));
            assert_eq!(r.velocity, Vector3::zeros());
        }
    }

    #[test]
    fn surge_moves_forward() {
        let input = DirectControlInput {
            surge: Detent::Positive,
            ..Default::default()
        };
        assert_eq!(direct_velocity(&input, 0.0, 5.0 * 1.5), Vector3::new(7.5, 0.0, 0.0));
        let slew = DirectControlInput {
            slew: Detent::Positive,
            ..Default::default()
        };
        let v = direct_velocity(&slew, 0.0, 2.0);
        assert_eq!(v, Vector3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn yaw_command_integrates() {
        let input = DirectControlInput {
            yaw: Detent::Positive,
            ..Default::default()
        };
        let mut hold = DirectHold::new(Vector3::zeros(), 0.0);
        for _ in 0..60 {
            hold.advance(&input, 5.0, 0.5, DEFAULT_DT);
        }
        assert_relative_eq!(hold.yaw, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn throttle_down_stops_at_ground() {
        let input = DirectControlInput {
            throttle: Detent::Negative,
            ..Default::default()
        };
        let mut hold = DirectHold::new(Vector3::new(0.0, 0.0, 0.1), 0.0);
        for _ in 0..60 {
            hold.advance(&input, 5.0, 0.5, DEFAULT_DT);
        }
        assert_eq!(hold.position.z, 0.0);
    }

    #[test]
    fn detent_rejects_other_values() {
        assert!(Detent::try_from(2).is_err());
        assert_eq!(Detent::try_from(-1), Ok(Detent::Negative));
    }

    #[test]
    fn arrival_pops_queue_and_plans_next() {
        let limits = NavigatorLimits::default();
        let a = wp(1, 0.0, 0.0, 5.0);
        let b = wp(2, 3.0, 0.0, 5.0);
        let mut nav = Navigator::new(at_origin().position, 0.0);
        nav.apply(NavUpdate::Queue(VecDeque::from([a, b])), &at_origin(), &limits);
        // A coincides with the current position: reached on first advance.
        let events = nav.advance(&at_origin(), &limits);
        assert_eq!(events, vec![NavEvent::WaypointReached(a)]);
        assert_eq!(nav.queue().len(), 1);
        assert_eq!(nav.plan().unwrap().goal, b);
    }

    #[test]
    fn empty_queue_holds_hover() {
        let limits = NavigatorLimits::default();
        let mut nav = Navigator::new(Vector3::new(1.0, 1.0, 4.0), 0.0);
        assert!(nav.advance(&at_origin(), &limits).is_empty());
        let r = nav.reference(&limits, DEFAULT_DT);
        assert_eq!(r, ReferenceSample::hold(Vector3::new(1.0, 1.0, 4.0), 0.0));
    }

    #[test]
    fn pause_freezes_clock() {
        let limits = NavigatorLimits::default();
        let mut nav = Navigator::new(at_origin().position, 0.0);
        nav.apply(
            NavUpdate::Queue(VecDeque::from([wp(1, 10.0, 0.0, 5.0)])),
            &at_origin(),
            &limits,
        );
        for _ in 0..30 {
            nav.reference(&limits, DEFAULT_DT);
        }
        nav.set_paused(true);
        let frozen = nav.clock();
        let a = nav.reference(&limits, DEFAULT_DT);
        let b = nav.reference(&limits, DEFAULT_DT);
        assert_eq!(a, b);
        assert_eq!(a.velocity, Vector3::zeros());
        assert_eq!(nav.clock(), frozen);
        nav.set_paused(false);
        let c = nav.reference(&limits, DEFAULT_DT);
        assert_eq!(c.position, a.position);
        assert!(c.velocity.norm() > 0.0);
    }

    #[test]
    fn three_waypoints_visited_in_order() {
        let p = PhysicalParams::default();
        let g = Gains::default();
        let limits = NavigatorLimits::default();
        let mut state = at_origin();
        let mut actual = RotorSpeeds::hover(&p);
        let mut nav = Navigator::new(state.position, 0.0);
        let route = [wp(1, 6.0, 0.0, 5.0), wp(2, 6.0, 6.0, 7.0), wp(3, 0.0, 6.0, 5.0)];
        nav.apply(NavUpdate::Queue(route.into_iter().collect()), &state, &limits);
        let mut reached = Vec::new();
        for _ in 0..(60 * 60) {
            for NavEvent::WaypointReached(w) in nav.advance(&state, &limits) {
                reached.push(w.id);
            }
            let r = nav.reference(&limits, DEFAULT_DT);
            let cmd = control_step(&state, &r, &g, &p).speeds;
            let (s, a) = step(&state, &cmd, &actual, &Disturbance::default(), &p, DEFAULT_DT).unwrap();
            state = s;
            actual = a;
        }
        assert_eq!(reached, vec![1, 2, 3]);
        assert!((state.position - route[2].position).norm() < 0.1);
    }

    proptest! {
        #[test]
        fn samples_are_continuous(
            dx in -40.0f64..40.0, dy in -40.0f64..40.0, dz in -3.0f64..3.0,
            v_max in 0.5f64..8.0, a_max in 0.5f64..4.0,
        ) {
            let plan = plan_segment(&at_origin(), wp(1, dx, dy, 5.0 + dz), v_max, a_max, 0.0);
            let dt = DEFAULT_DT;
            let mut prev = sample(&plan, 0.0);
            let steps = ((plan.profile.duration() + 1.0) / dt) as usize;
            for i in 1..=steps {
                let s = sample(&plan, i as f64 * dt);
                prop_assert!((s.position - prev.position).norm() <= v_max * dt + 1e-9);
                prop_assert!((s.velocity - prev.velocity).norm() <= a_max * dt + 1e-9);
                prop_assert!(s.velocity.norm() <= v_max + 1e-12);
                prev = s;
            }
            prop_assert_eq!(prev.position, plan.goal.position);
        }

        #[test]
        fn speed_non_increasing_on_approach(d in 0.1f64..60.0, v_max in 0.5f64..8.0, a_max in 0.5f64..4.0) {
            let plan = plan_segment(&at_origin(), wp(1, d, 0.0, 5.0), v_max, a_max, 0.0);
            // Braking distance of the segment; equals v_max²/(2·a_max) whenever
            // the profile reaches cruise speed.
            let peak = plan.profile.v_peak;
            let zone = peak * peak / (2.0 * a_max);
            if d >= v_max * v_max / a_max {
                prop_assert!((zone - v_max * v_max / (2.0 * a_max)).abs() < 1e-12);
            }
            let mut last_speed = f64::INFINITY;
            let steps = ((plan.profile.duration() + 0.5) / DEFAULT_DT) as usize;
            for i in 0..=steps {
                let s = sample(&plan, i as f64 * DEFAULT_DT);
                let remaining = (plan.goal.position - s.position).norm();
                if remaining <= zone {
                    prop_assert!(s.velocity.norm() <= last_speed + 1e-12);
                    last_speed = s.velocity.norm();
                }
            }
        }

        #[test]
        fn autonomy_is_pure(level in 1u8..=3, kind in 0u8..3, n in 0usize..4, selected in 1usize..3) {
            let level = AutonomyLevel::try_from(level).unwrap();
            let queue: VecDeque<_> = (0..n as u64).map(|i| wp(i, i as f64, 0.0, 5.0)).collect();
            let w = wp(99, 1.0, 1.0, 5.0);
            let cmd = match kind {
                0 => NavCommand::Direct(DirectControlInput::default()),
                1 => NavCommand::SetWaypoint(w),
                _ => NavCommand::AppendWaypoint(w),
            };
            prop_assert_eq!(
                apply_autonomy(level, &cmd, selected, &queue),
                apply_autonomy(level, &cmd, selected, &queue)
            );
        }
    }
}
