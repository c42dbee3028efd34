//! Wire protocol: every text frame is one JSON object `{kind, seq, payload}`.

use uavsim::nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use uavsim::engine::events::{EventRecord, OperatorAction, OperatorCommand};
use uavsim::navigation::{Detent, DirectControlInput};
use uavsim::world::{HomeBase, UavColor, WorldBounds};
use uavsim::{AutonomyLevel, WorldSnapshot};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub role: Role,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub uav_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointPayload {
    pub uav_ids: Vec<u32>,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectPayload {
    pub uav_ids: Vec<u32>,
    pub throttle: Detent,
    pub surge: Detent,
    pub yaw: Detent,
    pub slew: Detent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedScalePayload {
    pub uav_ids: Vec<u32>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagPayload {
    pub uav_ids: Vec<u32>,
    pub entity_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ClientCommand {
    Hello(Hello),
    Select(Selection),
    SetWaypoint(WaypointPayload),
    AppendWaypoint(WaypointPayload),
    DirectControl(DirectPayload),
    SetSpeedScale(SpeedScalePayload),
    Pause(Selection),
    Resume(Selection),
    Tag(TagPayload),
}

impl ClientCommand {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Hello(_) => "hello",
            Self::Select(_) => "select",
            Self::SetWaypoint(_) => "set_waypoint",
            Self::AppendWaypoint(_) => "append_waypoint",
            Self::DirectControl(_) => "direct_control",
            Self::SetSpeedScale(_) => "set_speed_scale",
            Self::Pause(_) => "pause",
            Self::Resume(_) => "resume",
            Self::Tag(_) => "tag",
        }
    }

    /// Addressed UAVs; `None` for `hello`.
    pub fn uav_ids(&self) -> Option<&[u32]> {
        match self {
            Self::Hello(_) => None,
            Self::Select(p) | Self::Pause(p) | Self::Resume(p) => Some(&p.uav_ids),
            Self::SetWaypoint(p) | Self::AppendWaypoint(p) => Some(&p.uav_ids),
            Self::DirectControl(p) => Some(&p.uav_ids),
            Self::SetSpeedScale(p) => Some(&p.uav_ids),
            Self::Tag(p) => Some(&p.uav_ids),
        }
    }

    /// Engine command for UAV-affecting kinds; `hello` and `select` have none.
    pub fn to_operator_command(&self) -> Option<OperatorCommand> {
        let action = match self {
            Self::Hello(_) | Self::Select(_) => return None,
            Self::SetWaypoint(p) => OperatorAction::SetWaypoint {
                position: Vector3::new(p.x, p.y, p.z),
            },
            Self::AppendWaypoint(p) => OperatorAction::AppendWaypoint {
                position: Vector3::new(p.x, p.y, p.z),
            },
            Self::DirectControl(p) => OperatorAction::DirectControl {
                input: DirectControlInput {
                    throttle: p.throttle,
                    surge: p.surge,
                    yaw: p.yaw,
                    slew: p.slew,
                },
            },
            Self::SetSpeedScale(p) => OperatorAction::SetSpeedScale { scale: p.scale },
            Self::Pause(_) => OperatorAction::Pause,
            Self::Resume(_) => OperatorAction::Resume,
            Self::Tag(p) => OperatorAction::Tag { entity_id: p.entity_id },
        };
        Some(OperatorCommand::new(self.uav_ids().unwrap_or_default(), action))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientFrame {
    pub seq: u64,
    pub command: ClientCommand,
}

/// Schema violation located by a JSON pointer such as `/payload/x`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn frame_object(text: &str) -> Result<Map<String, Value>, SchemaError> {
    let value: Value = serde_json::from_str(text).map_err(|e| SchemaError::new("", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(SchemaError::new("", "frame must be a JSON object"));
    };
    if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "kind" | "seq" | "payload")) {
        return Err(SchemaError::new(format!("/{extra}"), "unknown field"));
    }
    Ok(obj)
}

fn frame_header(obj: &Map<String, Value>) -> Result<(String, u64), SchemaError> {
    let kind = match obj.get("kind") {
        None => return Err(SchemaError::new("/kind", "missing field")),
        Some(Value::String(k)) => k.clone(),
        Some(_) => return Err(SchemaError::new("/kind", "expected a string")),
    };
    let seq = match obj.get("seq") {
        None => return Err(SchemaError::new("/seq", "missing field")),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| SchemaError::new("/seq", "expected a non-negative integer"))?,
    };
    Ok((kind, seq))
}

/// Deserializes `payload`, reporting failures as `/payload/...` pointers.
fn payload<T: DeserializeOwned>(value: Option<&Value>) -> Result<T, SchemaError> {
    let value = value.ok_or_else(|| SchemaError::new("/payload", "missing field"))?;
    serde_path_to_error::deserialize(value).map_err(|err| {
        let mut pointer = String::from("/payload");
        for seg in err.path().iter() {
            match seg {
                serde_path_to_error::Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                serde_path_to_error::Segment::Map { key } => pointer.push_str(&format!("/{key}")),
                serde_path_to_error::Segment::Enum { variant } => pointer.push_str(&format!("/{variant}")),
                serde_path_to_error::Segment::Unknown => pointer.push_str("/?"),
            }
        }
        let message = err.inner().to_string();
        // Missing fields are reported at their parent; point at the field.
        if let Some(name) = message.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            pointer.push('/');
            pointer.push_str(name);
        }
        SchemaError::new(pointer, message)
    })
}

pub fn decode_client(text: &str) -> Result<ClientFrame, SchemaError> {
    let obj = frame_object(text)?;
    let (kind, seq) = frame_header(&obj)?;
    let body = obj.get("payload");
    let command = match kind.as_str() {
        "hello" => ClientCommand::Hello(payload(body)?),
        "select" => ClientCommand::Select(payload(body)?),
        "set_waypoint" => ClientCommand::SetWaypoint(payload(body)?),
        "append_waypoint" => ClientCommand::AppendWaypoint(payload(body)?),
        "direct_control" => ClientCommand::DirectControl(payload(body)?),
        "set_speed_scale" => ClientCommand::SetSpeedScale(payload(body)?),
        "pause" => ClientCommand::Pause(payload(body)?),
        "resume" => ClientCommand::Resume(payload(body)?),
        "tag" => ClientCommand::Tag(payload(body)?),
        other => return Err(SchemaError::new("/kind", format!("unknown kind {other:?}"))),
    };
    if let Some(ids) = command.uav_ids() {
        if ids.is_empty() {
            return Err(SchemaError::new("/payload/uav_ids", "must not be empty"));
        }
    }
    Ok(ClientFrame { seq, command })
}

/// Builds a frame from its parts with canonical key order.
fn frame_text(kind: &str, seq: u64, payload_json: &str) -> String {
    format!("{{\"kind\":\"{kind}\",\"seq\":{seq},\"payload\":{payload_json}}}")
}

pub fn encode_client(frame: &ClientFrame) -> String {
    let value = serde_json::to_value(&frame.command).expect("command serializes");
    let payload = serde_json::to_string(&value["payload"]).expect("payload serializes");
    frame_text(frame.command.kind(), frame.seq, &payload)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavInfo {
    pub id: u32,
    pub color: UavColor,
    pub autonomy: AutonomyLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Welcome {
    pub session_id: u64,
    pub role: Role,
    pub protocol_version: u32,
    /// Tick at which the next command would take effect.
    pub tick: u64,
    pub timestep: f64,
    pub snapshot_rate: f64,
    pub world: WorldBounds,
    pub base: HomeBase,
    pub uavs: Vec<UavInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub ack_seq: u64,
    /// Engine tick at which the command takes effect.
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayReject {
    Malformed,
    UnknownId,
    RateLimited,
    NotOperator,
    HelloRequired,
    DuplicateHello,
    ProtocolVersion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reject {
    /// Absent when the offending frame had no readable `seq`.
    pub ack_seq: Option<u64>,
    pub reason: GatewayReject,
    pub detail: String,
    /// JSON pointer of the offending field, for schema violations.
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ServerPayload {
    Welcome(Welcome),
    Snapshot(WorldSnapshot),
    Event(EventRecord),
    Ack(Ack),
    Reject(Reject),
}

impl ServerPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Welcome(_) => "welcome",
            Self::Snapshot(_) => "snapshot",
            Self::Event(_) => "event",
            Self::Ack(_) => "ack",
            Self::Reject(_) => "reject",
        }
    }

    /// Payload JSON alone, for framing with a per-session `seq`.
    pub fn payload_json(&self) -> String {
        match self {
            Self::Welcome(p) => serde_json::to_string(p),
            Self::Snapshot(p) => serde_json::to_string(p),
            Self::Event(p) => serde_json::to_string(p),
            Self::Ack(p) => serde_json::to_string(p),
            Self::Reject(p) => serde_json::to_string(p),
        }
        .expect("server payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerFrame {
    pub seq: u64,
    pub payload: ServerPayload,
}

pub fn encode_server(frame: &ServerFrame) -> String {
    frame_text(frame.payload.kind(), frame.seq, &frame.payload.payload_json())
}

/// Frames an already-serialized payload.
pub fn encode_server_raw(kind: &str, seq: u64, payload_json: &str) -> String {
    frame_text(kind, seq, payload_json)
}

pub fn decode_server(text: &str) -> Result<ServerFrame, SchemaError> {
    let obj = frame_object(text)?;
    let (kind, seq) = frame_header(&obj)?;
    let body = obj.get("payload");
    let payload = match kind.as_str() {
        "welcome" => ServerPayload::Welcome(payload(body)?),
        "snapshot" => ServerPayload::Snapshot(payload(body)?),
        "event" => ServerPayload::Event(payload(body)?),
        "ack" => ServerPayload::Ack(payload(body)?),
        "reject" => ServerPayload::Reject(payload(body)?),
        other => return Err(SchemaError::new("/kind", format!("unknown kind {other:?}"))),
    };
    Ok(ServerFrame { seq, payload })
}
