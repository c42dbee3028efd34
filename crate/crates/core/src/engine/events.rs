use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::navigation::{DirectControlInput, RejectReason};

/// Allowed per-UAV speed multipliers.
pub const SPEED_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorAction {
    SetWaypoint { position: Vector3<f64> },
    AppendWaypoint { position: Vector3<f64> },
    DirectControl { input: DirectControlInput },
    SetSpeedScale { scale: f64 },
    Pause,
    Resume,
    Tag { entity_id: u32 },
}

impl OperatorAction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetWaypoint { .. } => "set_waypoint",
            Self::AppendWaypoint { .. } => "append_waypoint",
            Self::DirectControl { .. } => "direct_control",
            Self::SetSpeedScale { .. } => "set_speed_scale",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Tag { .. } => "tag",
        }
    }
}

/// One operator instruction addressed to one or more UAVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCommand {
    pub uav_ids: Vec<u32>,
    pub action: OperatorAction,
}

impl OperatorCommand {
    pub fn new(uav_ids: impl Into<Vec<u32>>, action: OperatorAction) -> Self {
        Self {
            uav_ids: uav_ids.into(),
            action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventSource {
    Operator,
    System,
    Uav(u32),
}

impl fmt::Display for EventSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Operator => f.write_str("operator"),
            Self::System => f.write_str("system"),
            Self::Uav(id) => write!(f, "uav:{id}"),
        }
    }
}

impl FromStr for EventSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "operator" => Ok(Self::Operator),
            "system" => Ok(Self::System),
            _ => s
                .strip_prefix("uav:")
                .and_then(|id| id.parse().ok())
                .map(Self::Uav)
                .ok_or_else(|| format!("unknown event source {s:?}")),
        }
    }
}

impl Serialize for EventSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Operator command accepted by at least one addressed UAV.
    Command,
    /// Operator command refused for every addressed UAV.
    Reject,
    WaypointReached,
    Tag,
    BatteryLow,
    BatteryDepleted,
    Takeoff,
    Landed,
    Crash,
}

impl EventKind {
    pub fn code(self) -> &'static str {
        match self {
            Self::Command => "command",
            Self::Reject => "reject",
            Self::WaypointReached => "waypoint-reached",
            Self::Tag => "tag",
            Self::BatteryLow => "battery-low",
            Self::BatteryDepleted => "battery-depleted",
            Self::Takeoff => "takeoff",
            Self::Landed => "landed",
            Self::Crash => "crash",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Command,
            Self::Reject,
            Self::WaypointReached,
            Self::Tag,
            Self::BatteryLow,
            Self::BatteryDepleted,
            Self::Takeoff,
            Self::Landed,
            Self::Crash,
        ]
        .into_iter()
        .find(|k| k.code() == s)
    }

    /// Whether the event records an operator action.
    pub fn is_operator_action(self) -> bool {
        matches!(self, Self::Command | Self::Reject)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub t: f64,
    pub tick: u64,
    pub source: EventSource,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavRejection {
    pub uav: u32,
    pub reason: RejectReason,
}

/// Payload of `command` and `reject` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandOutcome {
    pub command: OperatorCommand,
    pub accepted: Vec<u32>,
    pub rejected: Vec<UavRejection>,
}

impl CommandOutcome {
    pub fn is_accepted(&self) -> bool {
        !self.accepted.is_empty()
    }
}

/// Operator actions per minute over `[start, end)` seconds of sim time.
pub fn actions_per_minute(events: &[EventRecord], start: f64, end: f64) -> f64 {
    if !(end > start) {
        return 0.0;
    }
    let count = events
        .iter()
        .filter(|e| e.source == EventSource::Operator && e.kind.is_operator_action())
        .filter(|e| e.t >= start && e.t < end)
        .count();
    count as f64 * 60.0 / (end - start)
}
