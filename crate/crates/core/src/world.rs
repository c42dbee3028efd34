//! The disaster scene: roaming entities, UAV units with batteries, camera
//! footprints, identification and tagging.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Disturbance, RigidState, RotorSpeeds};
use crate::error::ConfigError;
use crate::navigation::{AutonomyLevel, Navigator, RejectReason};

/// Per-step probability that a mobile entity abandons its target.
pub const REPICK_PROBABILITY: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub width: f64,
    pub height: f64,
}

impl Default for WorldBounds {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
        }
    }
}

impl WorldBounds {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Vector2<f64> {
        Vector2::new(rng.gen_range(0.0..=self.width), rng.gen_range(0.0..=self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Person,
    Car,
    Helicopter,
    Fire,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [Self::Person, Self::Car, Self::Helicopter, Self::Fire];

    /// Cruise speed of the random walk, m/s.
    pub fn speed(self) -> f64 {
        match self {
            Self::Person => 1.2,
            Self::Car => 8.0,
            Self::Helicopter => 20.0,
            Self::Fire => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Person => "person",
            Self::Car => "car",
            Self::Helicopter => "helicopter",
            Self::Fire => "fire",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagStatus {
    Untagged,
    Tagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: u32,
    pub kind: EntityKind,
    pub position: Vector2<f64>,
    pub heading: f64,
    pub speed: f64,
    pub status: TagStatus,
    /// Seen by at least one downward camera.
    pub identified: bool,
    target: Vector2<f64>,
}

impl Entity {
    pub fn new(id: u32, kind: EntityKind, position: Vector2<f64>) -> Self {
        Self {
            id,
            kind,
            position,
            heading: 0.0,
            speed: kind.speed(),
            status: TagStatus::Untagged,
            identified: false,
            target: position,
        }
    }

    pub fn is_mobile(&self) -> bool {
        self.speed > 0.0
    }
}

/// Random-waypoint walk for every mobile entity. Fires stay put.
pub fn step_entities<R: Rng>(entities: &mut [Entity], rng: &mut R, bounds: &WorldBounds, dt: f64) {
    for e in entities.iter_mut().filter(|e| e.is_mobile()) {
        if rng.gen_bool(REPICK_PROBABILITY) {
            e.target = bounds.random_point(rng);
        }
        let to_target = e.target - e.position;
        let dist = to_target.norm();
        let reach = e.speed * dt;
        if dist <= reach {
            e.position = e.target;
            e.target = bounds.random_point(rng);
        } else {
            e.position += to_target * (reach / dist);
            e.heading = to_target.y.atan2(to_target.x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UavColor {
    Red,
    Yellow,
    Green,
    Blue,
}

impl UavColor {
    pub const ROSTER: [UavColor; 4] = [Self::Red, Self::Yellow, Self::Green, Self::Blue];

    /// Roster colour for the `index`-th UAV; cycles after four.
    pub fn cycled(index: usize) -> Self {
        Self::ROSTER[index % Self::ROSTER.len()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Red => "red",
            Self::Yellow => "yellow",
            Self::Green => "green",
            Self::Blue => "blue",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ROSTER.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UavStatus {
    Grounded,
    Flying,
    Crashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeBase {
    pub position: Vector2<f64>,
    pub radius: f64,
}

impl Default for HomeBase {
    fn default() -> Self {
        Self {
            position: Vector2::new(500.0, 500.0),
            radius: 15.0,
        }
    }
}

impl HomeBase {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (p.xy() - self.position).norm() <= self.radius
    }
}

/// Battery coefficients in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Airborne drain, %/s.
    pub drain_time: f64,
    /// Movement surcharge, % per metre travelled.
    pub drain_move: f64,
    /// Recharge at base, %/s.
    pub charge: f64,
    /// Level at which a battery-low event fires, %.
    pub low_threshold: f64,
}

impl Default for BatteryParams {
    /// 100 % over a 20-minute hover.
    fn default() -> Self {
        Self {
            drain_time: 100.0 / (20.0 * 60.0),
            drain_move: 0.01,
            charge: 1.0,
            low_threshold: 20.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("drain-time", self.drain_time),
            ("drain-move", self.drain_move),
            ("charge", self.charge),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid("battery", format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=100.0).contains(&self.low_threshold) {
            return Err(ConfigError::invalid("battery", "low-threshold must lie in [0, 100]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavUnit {
    pub id: u32,
    pub color: UavColor,
    pub state: RigidState,
    pub rotors: RotorSpeeds,
    /// Percent, 0–100.
    pub battery: f64,
    pub autonomy: AutonomyLevel,
    pub status: UavStatus,
    pub disturbance: Disturbance,
    pub navigator: Navigator,
    /// The last rotor allocation hit a speed limit.
    pub saturated: bool,
    pub distance_flown: f64,
    pub waypoints_reached: u32,
    pub(crate) low_battery_reported: bool,
}

impl UavUnit {
    pub fn new(id: u32, color: UavColor, state: RigidState, autonomy: AutonomyLevel, status: UavStatus) -> Self {
        Self {
            id,
            color,
            state,
            rotors: RotorSpeeds::default(),
            battery: 100.0,
            autonomy,
            status,
            disturbance: Disturbance::default(),
            navigator: Navigator::new(state.position, state.attitude.yaw),
            saturated: false,
            distance_flown: 0.0,
            waypoints_reached: 0,
            low_battery_reported: false,
        }
    }

    pub fn altitude(&self) -> f64 {
        self.state.position.z
    }

    pub fn is_flying(&self) -> bool {
        self.status == UavStatus::Flying
    }
}

/// New battery level after `dt` seconds.
pub fn battery_step(uav: &UavUnit, base: &HomeBase, params: &BatteryParams, dt: f64) -> f64 {
    let level = match uav.status {
        UavStatus::Flying => {
            let speed = uav.state.velocity.norm();
            uav.battery - (params.drain_time + params.drain_move * speed) * dt
        }
        UavStatus::Grounded if base.contains(&uav.state.position) => uav.battery + params.charge * dt,
        UavStatus::Grounded | UavStatus::Crashed => uav.battery,
    };
    level.clamp(0.0, 100.0)
}

/// Ground square seen by the downward camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFootprint {
    pub center: Vector2<f64>,
    pub half_side: f64,
}

impl CameraFootprint {
    pub fn new(position: &Vector3<f64>, fov: f64) -> Self {
        Self {
            center: position.xy(),
            half_side: position.z.max(0.0) * (0.5 * fov).tan(),
        }
    }

    pub fn of(uav: &UavUnit, fov: f64) -> Self {
        Self::new(&uav.state.position, fov)
    }

    /// Closed square: points on the edge are inside.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_side && d.y.abs() <= self.half_side
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_side * self.half_side
    }
}

/// Ids of entities inside the UAV's downward footprint, ascending.
pub fn visible_entities(uav: &UavUnit, entities: &[Entity], fov: f64) -> Vec<u32> {
    if !uav.is_flying() || uav.altitude() <= 0.0 {
        return Vec::new();
    }
    let footprint = CameraFootprint::of(uav, fov);
    let mut ids: Vec<u32> = entities
        .iter()
        .filter(|e| footprint.contains(&e.position))
        .map(|e| e.id)
        .collect();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBoard {
    pub persons_identified: u32,
    pub persons_tagged: u32,
    pub cars_identified: u32,
    pub cars_tagged: u32,
}

impl ScoreBoard {
    fn record_identified(&mut self, kind: EntityKind) {
        match kind {
            EntityKind::Person => self.persons_identified += 1,
            EntityKind::Car => self.cars_identified += 1,
            _ => {}
        }
    }

    fn record_tagged(&mut self, kind: EntityKind) {
        match kind {
            EntityKind::Person => self.persons_tagged += 1,
            EntityKind::Car => self.cars_tagged += 1,
            _ => {}
        }
    }
}

/// Marks everything in view as identified; returns newly identified ids.
pub fn identify_visible(uav: &UavUnit, entities: &mut [Entity], score: &mut ScoreBoard, fov: f64) -> Vec<u32> {
    let visible = visible_entities(uav, entities, fov);
    let mut fresh = Vec::new();
    for e in entities.iter_mut() {
        if !e.identified && visible.binary_search(&e.id).is_ok() {
            e.identified = true;
            score.record_identified(e.kind);
            fresh.push(e.id);
        }
    }
    fresh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("entity {0} is not in view")]
    NotVisible(u32),
    #[error("entity {0} is already tagged")]
    AlreadyTagged(u32),
    #[error("no entity with id {0}")]
    UnknownId(u32),
}

impl From<TagError> for RejectReason {
    fn from(e: TagError) -> Self {
        match e {
            TagError::NotVisible(_) => RejectReason::NotVisible,
            TagError::AlreadyTagged(_) => RejectReason::AlreadyTagged,
            TagError::UnknownId(_) => RejectReason::UnknownEntity,
        }
    }
}

/// Tags an entity seen by `uav`. Returns the tagged entity's kind.
pub fn tag_entity(
    uav: &UavUnit,
    entity_id: u32,
    entities: &mut [Entity],
    score: &mut ScoreBoard,
    fov: f64,
) -> Result<EntityKind, TagError> {
    let visible = visible_entities(uav, entities, fov);
    let entity = entities
        .iter_mut()
        .find(|e| e.id == entity_id)
        .ok_or(TagError::UnknownId(entity_id))?;
    if entity.status == TagStatus::Tagged {
        return Err(TagError::AlreadyTagged(entity_id));
    }
    if visible.binary_search(&entity_id).is_err() {
        return Err(TagError::NotVisible(entity_id));
    }
    if !entity.identified {
        entity.identified = true;
        score.record_identified(entity.kind);
    }
    entity.status = TagStatus::Tagged;
    score.record_tagged(entity.kind);
    Ok(entity.kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmHealth {
    pub mean_battery: f64,
    pub min_battery: f64,
    pub grounded: u32,
    pub flying: u32,
    pub crashed: u32,
}

pub fn swarm_health(uavs: &[UavUnit]) -> SwarmHealth {
    let mut health = SwarmHealth {
        mean_battery: 0.0,
        min_battery: if uavs.is_empty() { 0.0 } else { f64::INFINITY },
        grounded: 0,
        flying: 0,
        crashed: 0,
    };
    for u in uavs {
        health.mean_battery += u.battery;
        health.min_battery = health.min_battery.min(u.battery);
        match u.status {
            UavStatus::Grounded => health.grounded += 1,
            UavStatus::Flying => health.flying += 1,
            UavStatus::Crashed => health.crashed += 1,
        }
    }
    if !uavs.is_empty() {
        health.mean_battery /= uavs.len() as f64;
    }
    health
}
