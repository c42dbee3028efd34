use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ReferenceSample;
use crate::dynamics::{RigidState, RotorSpeeds};
use crate::navigation::{AutonomyLevel, Waypoint};
use crate::telemetry::{ErrorEllipse, VerticalBand};
use crate::world::{EntityKind, ScoreBoard, SwarmHealth, TagStatus, UavColor, UavStatus};

/// Immutable view of the whole world at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSnapshot {
    pub tick: u64,
    /// tick · dt, s
    pub time: f64,
    pub uavs: Vec<UavSnapshot>,
    pub entities: Vec<EntitySnapshot>,
    pub score: ScoreBoard,
    pub health: SwarmHealth,
}

impl WorldSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn uav(&self, id: u32) -> Option<&UavSnapshot> {
        self.uavs.iter().find(|u| u.id == id)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSnapshot {
    pub id: u32,
    pub color: UavColor,
    pub status: UavStatus,
    pub autonomy: AutonomyLevel,
    /// Percent.
    pub battery: f64,
    pub state: RigidState,
    pub rotor_speeds: RotorSpeeds,
    pub saturated: bool,
    /// Reference tracked during the last tick.
    pub reference: ReferenceSample,
    pub queue: Vec<Waypoint>,
    /// Waypoint id of the segment being flown.
    pub active_plan_id: Option<u64>,
    /// "waypoints", "direct" or "landing".
    pub mode: String,
    pub paused: bool,
    pub speed_scale: f64,
    pub distance_flown: f64,
    pub waypoints_reached: u32,
    pub deviation: DeviationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSummary {
    pub samples: usize,
    pub latest_residual: Option<Vector3<f64>>,
    pub mean_error: f64,
    pub max_error: f64,
    /// Absent until the window holds two samples.
    pub ellipse: Option<ErrorEllipse>,
    pub vertical: VerticalBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySnapshot {
    pub id: u32,
    pub kind: EntityKind,
    pub position: Vector2<f64>,
    pub heading: f64,
    pub status: TagStatus,
    pub identified: bool,
}
