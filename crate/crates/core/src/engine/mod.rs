//! Fixed-step orchestrator.
//!
//! Each tick runs, in order: operator commands, navigation, control,
//! dynamics, battery, entities, telemetry, event emission. A snapshot is
//! produced every [`SimConfig::snapshot_period`] ticks.

pub mod config;
pub mod events;
pub mod export;
pub mod log;
pub mod rng;
pub mod snapshot;

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{control_step, ReferenceSample};
use crate::dynamics::{step, Disturbance, RigidState, RotorSpeeds, CRASH_SPEED};
use crate::navigation::{apply_autonomy, NavCommand, NavEvent, NavMode, RejectReason, Waypoint};
use crate::telemetry::{ellipse, vertical_band, DeviationBuffer, DeviationSample};
use crate::world::{
    battery_step, identify_visible, step_entities, swarm_health, tag_entity, Entity, EntityKind, ScoreBoard,
    UavStatus, UavUnit,
};

use self::config::SimConfig;
use self::events::{
    CommandOutcome, EventKind, EventRecord, EventSource, OperatorAction, OperatorCommand, UavRejection, SPEED_SCALES,
};
use self::log::EventLog;
use self::snapshot::{DeviationSummary, EntitySnapshot, UavSnapshot, WorldSnapshot};

/// Height below which a UAV counts as touching the ground, m.
pub const GROUND_HEIGHT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickStage {
    Commands,
    Navigation,
    Control,
    Dynamics,
    Battery,
    Entities,
    Telemetry,
    Events,
}

impl TickStage {
    pub const ORDER: [TickStage; 8] = [
        Self::Commands,
        Self::Navigation,
        Self::Control,
        Self::Dynamics,
        Self::Battery,
        Self::Entities,
        Self::Telemetry,
        Self::Events,
    ];
}

/// Observer called after every pipeline stage.
pub trait TickProbe {
    fn after(&mut self, stage: TickStage, engine: &Engine);
}

struct NoProbe;

impl TickProbe for NoProbe {
    fn after(&mut self, _: TickStage, _: &Engine) {}
}

/// Whole-run tracking error against the reference, accumulated every tick
/// the UAV is airborne.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingStats {
    pub samples: u64,
    pub sum: f64,
    pub max: f64,
}

impl TrackingStats {
    fn push(&mut self, err: f64) {
        self.samples += 1;
        self.sum += err;
        self.max = self.max.max(err);
    }

    pub fn mean(&self) -> Option<f64> {
        (self.samples > 0).then(|| self.sum / self.samples as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub snapshot: Option<WorldSnapshot>,
    pub events: Vec<EventRecord>,
}

pub struct Engine {
    config: SimConfig,
    tick: u64,
    period: u64,
    uavs: Vec<UavUnit>,
    entities: Vec<Entity>,
    score: ScoreBoard,
    walk_rng: ChaCha8Rng,
    next_waypoint_id: u64,
    /// Reference used by the controller this tick.
    references: Vec<ReferenceSample>,
    /// Reference at the current clock, aligned with the post-step state.
    planned: Vec<ReferenceSample>,
    commanded: Vec<RotorSpeeds>,
    deviation: Vec<DeviationBuffer>,
    tracking: Vec<TrackingStats>,
    pending: Vec<EventRecord>,
    log: EventLog,
}

impl Engine {
    /// Builds the initial world. `config` is assumed validated.
    pub fn new(config: SimConfig) -> Self {
        let uavs: Vec<UavUnit> = config
            .uavs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let state = RigidState::at_rest(spec.position, spec.yaw);
                let airborne = spec.position.z > GROUND_HEIGHT;
                let status = if airborne { UavStatus::Flying } else { UavStatus::Grounded };
                let mut uav = UavUnit::new(i as u32 + 1, spec.color, state, spec.autonomy, status);
                uav.rotors = if airborne {
                    RotorSpeeds::hover(&config.physics)
                } else {
                    RotorSpeeds::default()
                };
                uav.disturbance = Disturbance {
                    force: spec.disturbance,
                };
                uav
            })
            .collect();

        let mut spawn_rng = rng::substream(config.seed, "entities/spawn");
        let mut entities = Vec::new();
        for placed in &config.entities.placed {
            entities.push(Entity::new(entities.len() as u32, placed.kind, placed.position));
        }
        for kind in EntityKind::ALL {
            for _ in 0..config.entities.random.of(kind) {
                let pos = config.bounds.random_point(&mut spawn_rng);
                entities.push(Entity::new(entities.len() as u32, kind, pos));
            }
        }
        let n = uavs.len();
        let references: Vec<_> = uavs
            .iter()
            .map(|u| ReferenceSample::hold(u.state.position, u.state.attitude.yaw))
            .collect();
        let window = config.logging.window;
        let rate = config.logging.snapshot_rate;
        Self {
            period: config.snapshot_period(),
            walk_rng: rng::substream(config.seed, "entities/walk"),
            log: EventLog::new(&config),
            commanded: uavs.iter().map(|u| u.rotors).collect(),
            planned: references.clone(),
            references,
            deviation: (0..n).map(|_| DeviationBuffer::for_rate(window, rate)).collect(),
            tracking: vec![TrackingStats::default(); n],
            pending: Vec::new(),
            score: ScoreBoard::default(),
            next_waypoint_id: 1,
            tick: 0,
            uavs,
            entities,
            config,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.timestep
    }

    pub fn snapshot_period(&self) -> u64 {
        self.period
    }

    pub fn uavs(&self) -> &[UavUnit] {
        &self.uavs
    }

    pub fn uav(&self, id: u32) -> Option<&UavUnit> {
        self.index_of(id).map(|i| &self.uavs[i])
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn score(&self) -> &ScoreBoard {
        &self.score
    }

    /// Controller reference used during the last tick, by roster index.
    pub fn references(&self) -> &[ReferenceSample] {
        &self.references
    }

    /// Reference at the current time, by roster index.
    pub fn planned(&self) -> &[ReferenceSample] {
        &self.planned
    }

    pub fn deviation(&self, index: usize) -> &DeviationBuffer {
        &self.deviation[index]
    }

    pub fn tracking(&self) -> &[TrackingStats] {
        &self.tracking
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log.events
    }

    /// Event log of the run so far, closed with the current snapshot hash.
    pub fn log(&self) -> EventLog {
        let mut log = self.log.clone();
        log.end = Some((self.tick, self.snapshot().hash()));
        log
    }

    pub fn has_uav(&self, id: u32) -> bool {
        self.index_of(id).is_some()
    }

    fn index_of(&self, id: u32) -> Option<usize> {
        let i = id.checked_sub(1)? as usize;
        (i < self.uavs.len()).then_some(i)
    }

    pub fn tick(&mut self, commands: &[OperatorCommand]) -> TickOutput {
        self.tick_with_probe(commands, &mut NoProbe)
    }

    pub fn run_ticks(&mut self, n: u64) {
        for _ in 0..n {
            self.tick(&[]);
        }
    }

    pub fn tick_with_probe(&mut self, commands: &[OperatorCommand], probe: &mut dyn TickProbe) -> TickOutput {
        self.tick += 1;
        self.pending.clear();

        for cmd in commands {
            self.apply_command(cmd);
        }
        probe.after(TickStage::Commands, self);
        self.navigation_stage();
        probe.after(TickStage::Navigation, self);
        self.control_stage();
        probe.after(TickStage::Control, self);
        self.dynamics_stage();
        probe.after(TickStage::Dynamics, self);
        self.battery_stage();
        probe.after(TickStage::Battery, self);
        self.entity_stage();
        probe.after(TickStage::Entities, self);
        self.telemetry_stage();
        probe.after(TickStage::Telemetry, self);

        let events = std::mem::take(&mut self.pending);
        self.log.events.extend(events.iter().cloned());
        probe.after(TickStage::Events, self);

        let snapshot = self.tick.is_multiple_of(self.period).then(|| self.snapshot());
        TickOutput {
            tick: self.tick,
            snapshot,
            events,
        }
    }

    fn emit(&mut self, source: EventSource, kind: EventKind, payload: serde_json::Value) {
        self.pending.push(EventRecord {
            t: self.time(),
            tick: self.tick,
            source,
            kind,
            payload,
        });
    }

    fn apply_command(&mut self, cmd: &OperatorCommand) {
        let mut outcome = CommandOutcome {
            command: cmd.clone(),
            accepted: Vec::new(),
            rejected: Vec::new(),
        };
        let structural = if cmd.uav_ids.is_empty() || cmd.uav_ids.iter().any(|id| !self.has_uav(*id)) {
            Some(RejectReason::UnknownUav)
        } else if matches!(cmd.action, OperatorAction::Tag { .. }) && cmd.uav_ids.len() != 1 {
            Some(RejectReason::MultiSelectForbidden)
        } else {
            None
        };
        match structural {
            Some(reason) => outcome.rejected = cmd.uav_ids.iter().map(|&uav| UavRejection { uav, reason }).collect(),
            None => {
                for &id in &cmd.uav_ids {
                    match self.apply_to_uav(id, cmd) {
                        Ok(()) => outcome.accepted.push(id),
                        Err(reason) => outcome.rejected.push(UavRejection { uav: id, reason }),
                    }
                }
            }
        }
        let kind = if outcome.is_accepted() { EventKind::Command } else { EventKind::Reject };
        let payload = serde_json::to_value(&outcome).expect("outcome serializes");
        self.emit(EventSource::Operator, kind, payload);
    }

    fn apply_to_uav(&mut self, id: u32, cmd: &OperatorCommand) -> Result<(), RejectReason> {
        let i = self.index_of(id).ok_or(RejectReason::UnknownUav)?;
        let limits = self.config.navigator;
        let fov = self.config.camera_fov;
        let selected = cmd.uav_ids.len();
        {
            let uav = &self.uavs[i];
            if uav.status == UavStatus::Crashed || uav.battery <= 0.0 || uav.navigator.is_landing() {
                return Err(RejectReason::UavUnavailable);
            }
        }
        let nav_cmd = match cmd.action {
            OperatorAction::SetWaypoint { position } | OperatorAction::AppendWaypoint { position } => {
                if !position.iter().all(|c| c.is_finite()) || !self.config.bounds.contains(&position.xy()) {
                    return Err(RejectReason::OutOfBounds);
                }
                if position.z < limits.min_altitude {
                    return Err(RejectReason::BelowMinAltitude);
                }
                let wp = Waypoint {
                    id: self.next_waypoint_id,
                    position,
                };
                if matches!(cmd.action, OperatorAction::SetWaypoint { .. }) {
                    NavCommand::SetWaypoint(wp)
                } else {
                    NavCommand::AppendWaypoint(wp)
                }
            }
            OperatorAction::DirectControl { input } => NavCommand::Direct(input),
            OperatorAction::SetSpeedScale { scale } => {
                if !SPEED_SCALES.contains(&scale) {
                    return Err(RejectReason::InvalidSpeedScale);
                }
                let uav = &mut self.uavs[i];
                uav.navigator.rescale(scale, &uav.state, &limits);
                return Ok(());
            }
            OperatorAction::Pause | OperatorAction::Resume => {
                let uav = &mut self.uavs[i];
                uav.navigator.set_paused(matches!(cmd.action, OperatorAction::Pause));
                return Ok(());
            }
            OperatorAction::Tag { entity_id } => {
                let uav = &self.uavs[i];
                let kind = tag_entity(uav, entity_id, &mut self.entities, &mut self.score, fov)?;
                self.emit(
                    EventSource::Uav(id),
                    EventKind::Tag,
                    json!({ "entity_id": entity_id, "entity_kind": kind }),
                );
                return Ok(());
            }
        };
        let uav = &mut self.uavs[i];
        let update = apply_autonomy(uav.autonomy, &nav_cmd, selected, uav.navigator.queue())?;
        uav.navigator.apply(update, &uav.state, &limits);
        if matches!(nav_cmd, NavCommand::SetWaypoint(_) | NavCommand::AppendWaypoint(_)) {
            self.next_waypoint_id += 1;
        }
        Ok(())
    }

    fn navigation_stage(&mut self) {
        let limits = self.config.navigator;
        let dt = self.config.timestep;
        for i in 0..self.uavs.len() {
            let uav = &mut self.uavs[i];
            if uav.status == UavStatus::Crashed {
                continue;
            }
            let reached = if uav.is_flying() {
                uav.navigator.advance(&uav.state, &limits)
            } else {
                // Grounded: plan from the pad without arrival checks.
                uav.navigator.advance(&uav.state, &limits);
                Vec::new()
            };
            let reference = uav.navigator.reference(&limits, dt);
            self.references[i] = reference;
            let id = uav.id;
            let takeoff = uav.status == UavStatus::Grounded && uav.battery > 0.0 && reference.position.z > GROUND_HEIGHT;
            if takeoff {
                uav.status = UavStatus::Flying;
            }
            for NavEvent::WaypointReached(wp) in reached {
                self.uavs[i].waypoints_reached += 1;
                self.emit(
                    EventSource::Uav(id),
                    EventKind::WaypointReached,
                    json!({ "waypoint_id": wp.id, "position": wp.position }),
                );
            }
            if takeoff {
                self.emit(EventSource::Uav(id), EventKind::Takeoff, json!({}));
            }
        }
    }

    fn control_stage(&mut self) {
        for (i, uav) in self.uavs.iter_mut().enumerate() {
            if !uav.is_flying() {
                self.commanded[i] = RotorSpeeds::default();
                continue;
            }
            let alloc = control_step(&uav.state, &self.references[i], &self.config.gains, &self.config.physics);
            self.commanded[i] = alloc.speeds;
            uav.saturated = alloc.saturated;
        }
    }

    fn dynamics_stage(&mut self) {
        let dt = self.config.timestep;
        for i in 0..self.uavs.len() {
            if !self.uavs[i].is_flying() {
                continue;
            }
            let uav = &mut self.uavs[i];
            let before = uav.state;
            let result = step(
                &uav.state,
                &self.commanded[i],
                &uav.rotors,
                &uav.disturbance,
                &self.config.physics,
                dt,
            );
            let id = uav.id;
            match result {
                Err(_) => {
                    uav.status = UavStatus::Crashed;
                    uav.rotors = RotorSpeeds::default();
                    uav.state.velocity = Vector3::zeros();
                    uav.state.body_rates = Vector3::zeros();
                    let position = uav.state.position;
                    self.emit(
                        EventSource::Uav(id),
                        EventKind::Crash,
                        json!({ "cause": "non-finite state", "position": position }),
                    );
                }
                Ok((mut next, rotors)) => {
                    uav.rotors = rotors;
                    if next.position.z < 0.0 {
                        let impact = next.velocity.z;
                        next.position.z = 0.0;
                        next.velocity = Vector3::zeros();
                        next.body_rates = Vector3::zeros();
                        next.attitude.roll = 0.0;
                        next.attitude.pitch = 0.0;
                        if impact < -CRASH_SPEED {
                            uav.state = next;
                            uav.distance_flown += (next.position - before.position).norm();
                            uav.status = UavStatus::Crashed;
                            uav.rotors = RotorSpeeds::default();
                            self.emit(
                                EventSource::Uav(id),
                                EventKind::Crash,
                                json!({ "cause": "ground impact", "vertical_speed": impact, "position": next.position }),
                            );
                            continue;
                        }
                    }
                    uav.distance_flown += (next.position - before.position).norm();
                    uav.state = next;
                }
            }
        }
    }

    fn battery_stage(&mut self) {
        let dt = self.config.timestep;
        let params = self.config.battery;
        for i in 0..self.uavs.len() {
            let uav = &mut self.uavs[i];
            let before = uav.battery;
            uav.battery = battery_step(uav, &self.config.base, &params, dt);
            let id = uav.id;
            let level = uav.battery;
            if level > params.low_threshold {
                uav.low_battery_reported = false;
            } else if !uav.low_battery_reported && level < before {
                uav.low_battery_reported = true;
                self.emit(EventSource::Uav(id), EventKind::BatteryLow, json!({ "battery": level }));
            }
            let uav = &mut self.uavs[i];
            if level <= 0.0 && before > 0.0 && uav.is_flying() {
                uav.navigator.force_landing(&uav.state);
                self.emit(EventSource::Uav(id), EventKind::BatteryDepleted, json!({}));
            }
        }
    }

    fn entity_stage(&mut self) {
        step_entities(&mut self.entities, &mut self.walk_rng, &self.config.bounds, self.config.timestep);
        for uav in self.uavs.iter().filter(|u| u.is_flying()) {
            identify_visible(uav, &mut self.entities, &mut self.score, self.config.camera_fov);
        }
    }

    fn telemetry_stage(&mut self) {
        let limits = self.config.navigator;
        let record = self.tick.is_multiple_of(self.period);
        let t = self.time();
        for i in 0..self.uavs.len() {
            let uav = &mut self.uavs[i];
            if uav.status == UavStatus::Crashed {
                continue;
            }
            let planned = uav.navigator.planned(&limits);
            self.planned[i] = planned;
            if !uav.is_flying() {
                continue;
            }
            self.tracking[i].push((uav.state.position - planned.position).norm());
            if record {
                // Times are strictly increasing by construction.
                let _ = self.deviation[i].record(DeviationSample::new(t, &planned, &uav.state));
            }
            let touching = uav.state.position.z <= GROUND_HEIGHT && planned.position.z <= GROUND_HEIGHT;
            if touching && uav.state.velocity.norm() < limits.arrival_speed {
                let pad = Vector3::new(uav.state.position.x, uav.state.position.y, 0.0);
                uav.status = UavStatus::Grounded;
                uav.state = RigidState::at_rest(pad, uav.state.attitude.yaw);
                uav.rotors = RotorSpeeds::default();
                uav.saturated = false;
                uav.navigator.reset_hold(pad);
                self.planned[i] = ReferenceSample::hold(pad, uav.state.attitude.yaw);
                let id = uav.id;
                let at_base = self.config.base.contains(&pad);
                self.emit(
                    EventSource::Uav(id),
                    EventKind::Landed,
                    json!({ "position": pad, "at_base": at_base }),
                );
            }
        }
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        let confidence = self.config.logging.confidence;
        let uavs = self
            .uavs
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let buffer = &self.deviation[i];
                let stats = buffer.stats();
                UavSnapshot {
                    id: u.id,
                    color: u.color,
                    status: u.status,
                    autonomy: u.autonomy,
                    battery: u.battery,
                    state: u.state,
                    rotor_speeds: u.rotors,
                    saturated: u.saturated,
                    reference: self.planned[i],
                    queue: u.navigator.queue().iter().copied().collect(),
                    active_plan_id: u.navigator.plan().map(|p| p.goal.id),
                    mode: match u.navigator.mode() {
                        NavMode::Waypoints => "waypoints",
                        NavMode::Direct { .. } => "direct",
                        NavMode::Landing { .. } => "landing",
                    }
                    .to_owned(),
                    paused: u.navigator.paused(),
                    speed_scale: u.navigator.speed_scale(),
                    distance_flown: u.distance_flown,
                    waypoints_reached: u.waypoints_reached,
                    deviation: DeviationSummary {
                        samples: stats.count,
                        latest_residual: buffer.latest().map(|s| s.residual),
                        mean_error: stats.mean_error,
                        max_error: stats.max_error,
                        ellipse: ellipse(buffer, confidence).ok(),
                        vertical: vertical_band(buffer),
                    },
                }
            })
            .collect();
        WorldSnapshot {
            tick: self.tick,
            time: self.time(),
            uavs,
            entities: self
                .entities
                .iter()
                .map(|e| EntitySnapshot {
                    id: e.id,
                    kind: e.kind,
                    position: e.position,
                    heading: e.heading,
                    status: e.status,
                    identified: e.identified,
                })
                .collect(),
            score: self.score,
            health: swarm_health(&self.uavs),
        }
    }
}
