//! Scenario configuration and its XML loader.
//!
//! Root element `<scenario seed="..">` with optional children `<world>`,
//! `<physics>`, `<gains>`, `<navigator>`, `<battery>`, `<uavs>`,
//! `<entities>`, `<base>` and `<logging>`. Every attribute is optional and
//! falls back to the defaults below; unknown elements or attributes are
//! rejected.

use nalgebra::{Vector2, Vector3};
use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::Gains;
use crate::dynamics::{PhysicalParams, DEFAULT_DT};
use crate::error::ConfigError;
use crate::navigation::{AutonomyLevel, NavigatorLimits};
use crate::world::{BatteryParams, EntityKind, HomeBase, UavColor, WorldBounds};

pub const MAX_UAVS: usize = 16;
pub const DEFAULT_UAV_COUNT: usize = 4;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSpec {
    pub color: UavColor,
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub autonomy: AutonomyLevel,
    /// Constant world-frame force on this airframe, N.
    pub disturbance: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub persons: u32,
    pub cars: u32,
    pub helicopters: u32,
    pub fires: u32,
}

impl Default for EntityCounts {
    fn default() -> Self {
        Self {
            persons: 20,
            cars: 10,
            helicopters: 2,
            fires: 5,
        }
    }
}

impl EntityCounts {
    pub const NONE: EntityCounts = EntityCounts {
        persons: 0,
        cars: 0,
        helicopters: 0,
        fires: 0,
    };

    pub fn of(&self, kind: EntityKind) -> u32 {
        match kind {
            EntityKind::Person => self.persons,
            EntityKind::Car => self.cars,
            EntityKind::Helicopter => self.helicopters,
            EntityKind::Fire => self.fires,
        }
    }

    pub fn total(&self) -> u32 {
        self.persons + self.cars + self.helicopters + self.fires
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedEntity {
    pub kind: EntityKind,
    pub position: Vector2<f64>,
}

/// Explicitly placed entities plus randomly scattered ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityLayout {
    pub placed: Vec<PlacedEntity>,
    pub random: EntityCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggingConfig {
    /// Snapshots per second.
    pub snapshot_rate: f64,
    /// Deviation window, s.
    pub window: f64,
    /// Error-ellipse confidence.
    pub confidence: f64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self {
            snapshot_rate: 20.0,
            window: 5.0,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub bounds: WorldBounds,
    /// s
    pub timestep: f64,
    /// Full downward camera field of view, rad.
    pub camera_fov: f64,
    pub physics: PhysicalParams,
    pub gains: Gains,
    pub navigator: NavigatorLimits,
    pub battery: BatteryParams,
    pub uavs: Vec<UavSpec>,
    pub entities: EntityLayout,
    pub base: HomeBase,
    pub logging: LoggingConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let base = HomeBase::default();
        Self {
            seed: DEFAULT_SEED,
            bounds: WorldBounds::default(),
            timestep: DEFAULT_DT,
            camera_fov: 60f64.to_radians(),
            physics: PhysicalParams::default(),
            gains: Gains::default(),
            navigator: NavigatorLimits::default(),
            battery: BatteryParams::default(),
            uavs: default_roster(&base, DEFAULT_UAV_COUNT, AutonomyLevel::Sequence),
            entities: EntityLayout {
                placed: Vec::new(),
                random: EntityCounts::default(),
            },
            base,
            logging: LoggingConfig::default(),
        }
    }
}

/// `count` UAVs hovering at 10 m on a 4 m grid around the home base.
pub fn default_roster(base: &HomeBase, count: usize, autonomy: AutonomyLevel) -> Vec<UavSpec> {
    (0..count)
        .map(|i| {
            let col = (i % 4) as f64;
            let row = (i / 4) as f64;
            UavSpec {
                color: UavColor::cycled(i),
                position: Vector3::new(base.position.x - 6.0 + 4.0 * col, base.position.y - 6.0 + 4.0 * row, 10.0),
                yaw: 0.0,
                autonomy,
                disturbance: Vector3::zeros(),
            }
        })
        .collect()
}

impl SimConfig {
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if !(self.timestep.is_finite() && self.timestep > 0.0) {
            return Err(ConfigError::invalid("world", format!("timestep must be > 0, got {}", self.timestep)));
        }
        if !(self.bounds.width > 0.0 && self.bounds.height > 0.0) {
            return Err(ConfigError::invalid("world", "width and height must be > 0"));
        }
        if !(self.camera_fov > 0.0 && self.camera_fov < std::f64::consts::PI) {
            return Err(ConfigError::invalid("world", "camera-fov must lie in (0, 180) degrees"));
        }
        self.physics.validate()?;
        self.gains.validate()?;
        self.navigator.validate()?;
        self.battery.validate()?;
        if self.uavs.is_empty() || self.uavs.len() > MAX_UAVS {
            return Err(ConfigError::invalid(
                "uavs",
                format!("roster size must lie in 1..={MAX_UAVS}, got {}", self.uavs.len()),
            ));
        }
        for (i, u) in self.uavs.iter().enumerate() {
            let inside = self.bounds.contains(&u.position.xy()) && u.position.z >= 0.0 && u.position.z.is_finite();
            if !inside {
                return Err(ConfigError::invalid("uav", format!("UAV {} spawns outside the world", i + 1)));
            }
            if !(u.yaw.is_finite() && u.disturbance.iter().all(|f| f.is_finite())) {
                return Err(ConfigError::invalid("uav", format!("UAV {} has non-finite yaw or disturbance", i + 1)));
            }
        }
        for e in &self.entities.placed {
            if !self.bounds.contains(&e.position) {
                return Err(ConfigError::invalid("entity", "entity placed outside the world"));
            }
        }
        if !(self.base.radius > 0.0 && self.bounds.contains(&self.base.position)) {
            return Err(ConfigError::invalid("base", "base must lie inside the world with radius > 0"));
        }
        let l = &self.logging;
        if !(l.snapshot_rate.is_finite() && l.snapshot_rate > 0.0) {
            return Err(ConfigError::invalid("logging", "snapshot-rate must be > 0"));
        }
        if !(l.window.is_finite() && l.window > 0.0) {
            return Err(ConfigError::invalid("logging", "window must be > 0"));
        }
        if !(l.confidence > 0.0 && l.confidence < 1.0) {
            return Err(ConfigError::invalid("logging", "confidence must lie in (0, 1)"));
        }

        let mut warnings = Vec::new();
        let mut seen = Vec::new();
        for u in &self.uavs {
            if seen.contains(&u.color) {
                warnings.push(format!(
                    "roster of {} UAVs shares {} colours; colour {} repeats",
                    self.uavs.len(),
                    UavColor::ROSTER.len(),
                    u.color.name()
                ));
                break;
            }
            seen.push(u.color);
        }
        Ok(warnings)
    }

    /// Ticks between snapshots: ⌈1 / (rate·dt)⌉.
    pub fn snapshot_period(&self) -> u64 {
        let ratio = 1.0 / (self.logging.snapshot_rate * self.timestep);
        // Guard against 2.9999999999999996-style ratios.
        let rounded = ratio.round();
        let period = if (ratio - rounded).abs() < 1e-9 { rounded } else { ratio.ceil() };
        (period as u64).max(1)
    }

    /// Stable digest of every setting, hex encoded.
    pub fn scenario_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: SimConfig,
    pub warnings: Vec<String>,
}

/// Parses and validates a scenario document.
pub fn load_config(document: &str) -> Result<LoadedConfig, ConfigError> {
    let doc = Document::parse(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "scenario" {
        return Err(ConfigError::invalid(
            root.tag_name().name(),
            "root element must be <scenario>",
        ));
    }
    let mut config = SimConfig::default();
    let scenario = Attrs::new(root, &["seed"])?;
    config.seed = scenario.parse("seed", DEFAULT_SEED)?;

    let mut seen: Vec<&str> = Vec::new();
    let mut roster_count: Option<usize> = None;
    let mut roster_autonomy = AutonomyLevel::Sequence;
    let mut explicit_uavs: Vec<Node> = Vec::new();

    for child in root.children().filter(Node::is_element) {
        let name = child.tag_name().name();
        if seen.contains(&name) {
            return Err(ConfigError::invalid(name, "element appears more than once"));
        }
        seen.push(name);
        match name {
            "world" => {
                let a = Attrs::new(child, &["width", "height", "timestep", "camera-fov"])?;
                config.bounds.width = a.parse("width", config.bounds.width)?;
                config.bounds.height = a.parse("height", config.bounds.height)?;
                config.timestep = a.parse("timestep", config.timestep)?;
                let fov_deg: f64 = a.parse("camera-fov", config.camera_fov.to_degrees())?;
                config.camera_fov = fov_deg.to_radians();
                no_children(child)?;
            }
            "physics" => {
                let a = Attrs::new(
                    child,
                    &[
                        "mass",
                        "gravity",
                        "arm-length",
                        "thrust-coeff",
                        "moment-coeff",
                        "ixx",
                        "iyy",
                        "izz",
                        "motor-lag",
                        "rotor-min",
                        "rotor-max",
                    ],
                )?;
                let p = &mut config.physics;
                p.mass = a.parse("mass", p.mass)?;
                p.gravity = a.parse("gravity", p.gravity)?;
                p.arm_length = a.parse("arm-length", p.arm_length)?;
                p.thrust_coeff = a.parse("thrust-coeff", p.thrust_coeff)?;
                p.moment_coeff = a.parse("moment-coeff", p.moment_coeff)?;
                p.inertia.x = a.parse("ixx", p.inertia.x)?;
                p.inertia.y = a.parse("iyy", p.inertia.y)?;
                p.inertia.z = a.parse("izz", p.inertia.z)?;
                p.motor_lag = a.parse("motor-lag", p.motor_lag)?;
                p.rotor_speed_min = a.parse("rotor-min", p.rotor_speed_min)?;
                p.rotor_speed_max = a.parse("rotor-max", p.rotor_speed_max)?;
                no_children(child)?;
            }
            "gains" => {
                let a = Attrs::new(child, &["kp-pos", "kd-pos", "kp-att", "kd-att", "max-tilt"])?;
                let g = &mut config.gains;
                g.kp_pos = a.triple("kp-pos", g.kp_pos)?;
                g.kd_pos = a.triple("kd-pos", g.kd_pos)?;
                g.kp_att = a.triple("kp-att", g.kp_att)?;
                g.kd_att = a.triple("kd-att", g.kd_att)?;
                g.max_tilt = a.parse("max-tilt", g.max_tilt)?;
                no_children(child)?;
            }
            "navigator" => {
                let a = Attrs::new(
                    child,
                    &[
                        "v-max",
                        "a-max",
                        "arrival-radius",
                        "arrival-speed",
                        "min-altitude",
                        "yaw-rate",
                        "yaw",
                        "landing-speed",
                    ],
                )?;
                let n = &mut config.navigator;
                n.v_max = a.parse("v-max", n.v_max)?;
                n.a_max = a.parse("a-max", n.a_max)?;
                n.arrival_radius = a.parse("arrival-radius", n.arrival_radius)?;
                n.arrival_speed = a.parse("arrival-speed", n.arrival_speed)?;
                n.min_altitude = a.parse("min-altitude", n.min_altitude)?;
                n.yaw_rate = a.parse("yaw-rate", n.yaw_rate)?;
                n.mission_yaw = a.parse("yaw", n.mission_yaw)?;
                n.landing_speed = a.parse("landing-speed", n.landing_speed)?;
                no_children(child)?;
            }
            "battery" => {
                let a = Attrs::new(child, &["drain-time", "drain-move", "charge", "low-threshold"])?;
                let b = &mut config.battery;
                b.drain_time = a.parse("drain-time", b.drain_time)?;
                b.drain_move = a.parse("drain-move", b.drain_move)?;
                b.charge = a.parse("charge", b.charge)?;
                b.low_threshold = a.parse("low-threshold", b.low_threshold)?;
                no_children(child)?;
            }
            "uavs" => {
                let a = Attrs::new(child, &["count", "autonomy"])?;
                if a.has("count") {
                    roster_count = Some(a.parse("count", DEFAULT_UAV_COUNT)?);
                }
                roster_autonomy = a.autonomy("autonomy", roster_autonomy)?;
                for uav in child.children().filter(Node::is_element) {
                    if uav.tag_name().name() != "uav" {
                        return Err(ConfigError::invalid(uav.tag_name().name(), "unknown element inside <uavs>"));
                    }
                    explicit_uavs.push(uav);
                }
            }
            "entities" => {
                let a = Attrs::new(child, &["persons", "cars", "helicopters", "fires"])?;
                let mut placed = Vec::new();
                for e in child.children().filter(Node::is_element) {
                    if e.tag_name().name() != "entity" {
                        return Err(ConfigError::invalid(e.tag_name().name(), "unknown element inside <entities>"));
                    }
                    let ea = Attrs::new(e, &["kind", "x", "y"])?;
                    let kind_name = ea.required("kind")?;
                    let kind = EntityKind::parse(kind_name)
                        .ok_or_else(|| ConfigError::invalid("entity", format!("unknown kind {kind_name:?}")))?;
                    placed.push(PlacedEntity {
                        kind,
                        position: Vector2::new(ea.parse_required("x")?, ea.parse_required("y")?),
                    });
                }
                // Listing entities by hand switches off the default scatter.
                let fallback = if placed.is_empty() { EntityCounts::default() } else { EntityCounts::NONE };
                config.entities = EntityLayout {
                    random: EntityCounts {
                        persons: a.parse("persons", fallback.persons)?,
                        cars: a.parse("cars", fallback.cars)?,
                        helicopters: a.parse("helicopters", fallback.helicopters)?,
                        fires: a.parse("fires", fallback.fires)?,
                    },
                    placed,
                };
            }
            "base" => {
                let a = Attrs::new(child, &["x", "y", "radius"])?;
                let b = &mut config.base;
                b.position.x = a.parse("x", b.position.x)?;
                b.position.y = a.parse("y", b.position.y)?;
                b.radius = a.parse("radius", b.radius)?;
                no_children(child)?;
            }
            "logging" => {
                let a = Attrs::new(child, &["snapshot-rate", "window", "confidence"])?;
                let l = &mut config.logging;
                l.snapshot_rate = a.parse("snapshot-rate", l.snapshot_rate)?;
                l.window = a.parse("window", l.window)?;
                l.confidence = a.parse("confidence", l.confidence)?;
                no_children(child)?;
            }
            other => return Err(ConfigError::invalid(other, "unknown element")),
        }
    }

    // The roster is built last so it can use the final base position.
    let count = roster_count.unwrap_or(if explicit_uavs.is_empty() {
        DEFAULT_UAV_COUNT
    } else {
        explicit_uavs.len()
    });
    if !explicit_uavs.is_empty() && count != explicit_uavs.len() {
        return Err(ConfigError::invalid(
            "uavs",
            format!("count={count} but {} <uav> elements listed", explicit_uavs.len()),
        ));
    }
    if count == 0 || count > MAX_UAVS {
        return Err(ConfigError::invalid("uavs", format!("roster size must lie in 1..={MAX_UAVS}, got {count}")));
    }
    let mut roster = default_roster(&config.base, count, roster_autonomy);
    for (i, node) in explicit_uavs.iter().enumerate() {
        let a = Attrs::new(*node, &["color", "x", "y", "z", "yaw", "autonomy", "disturbance"])?;
        let spec = &mut roster[i];
        if let Some(c) = a.get("color") {
            spec.color = UavColor::parse(c).ok_or_else(|| ConfigError::invalid("uav", format!("unknown color {c:?}")))?;
        }
        spec.position.x = a.parse("x", spec.position.x)?;
        spec.position.y = a.parse("y", spec.position.y)?;
        spec.position.z = a.parse("z", spec.position.z)?;
        spec.yaw = a.parse("yaw", spec.yaw)?;
        spec.autonomy = a.autonomy("autonomy", roster_autonomy)?;
        spec.disturbance = a.triple("disturbance", spec.disturbance)?;
        no_children(*node)?;
    }
    config.uavs = roster;

    let warnings = config.validate()?;
    Ok(LoadedConfig { config, warnings })
}

fn no_children(node: Node) -> Result<(), ConfigError> {
    match node.children().find(Node::is_element) {
        Some(c) => Err(ConfigError::invalid(
            c.tag_name().name(),
            format!("unexpected element inside <{}>", node.tag_name().name()),
        )),
        None => Ok(()),
    }
}

/// Attribute accessor that rejects names outside an allow-list.
struct Attrs<'a, 'input> {
    node: Node<'a, 'input>,
    element: &'a str,
}

impl<'a, 'input> Attrs<'a, 'input> {
    fn new(node: Node<'a, 'input>, allowed: &[&str]) -> Result<Self, ConfigError> {
        let element = node.tag_name().name();
        for attr in node.attributes() {
            if !allowed.contains(&attr.name()) {
                return Err(ConfigError::invalid(element, format!("unknown attribute {:?}", attr.name())));
            }
        }
        Ok(Self { node, element })
    }

    fn has(&self, name: &str) -> bool {
        self.node.has_attribute(name)
    }

    fn get(&self, name: &str) -> Option<&'a str> {
        self.node.attribute(name)
    }

    fn required(&self, name: &str) -> Result<&'a str, ConfigError> {
        self.get(name)
            .ok_or_else(|| ConfigError::invalid(self.element, format!("missing attribute {name:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T, ConfigError> {
        match self.get(name) {
            None => Ok(default),
            Some(raw) => raw.trim().parse().map_err(|_| {
                ConfigError::invalid(self.element, format!("attribute {name:?} has invalid value {raw:?}"))
            }),
        }
    }

    fn parse_required<T: std::str::FromStr>(&self, name: &str) -> Result<T, ConfigError> {
        let raw = self.required(name)?;
        raw.trim()
            .parse()
            .map_err(|_| ConfigError::invalid(self.element, format!("attribute {name:?} has invalid value {raw:?}")))
    }

    /// Three numbers separated by whitespace or commas.
    fn triple(&self, name: &str, default: Vector3<f64>) -> Result<Vector3<f64>, ConfigError> {
        let Some(raw) = self.get(name) else {
            return Ok(default);
        };
        let parts: Vec<f64> = raw
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError::invalid(self.element, format!("attribute {name:?} has invalid value {raw:?}")))?;
        match parts.as_slice() {
            [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
            _ => Err(ConfigError::invalid(
                self.element,
                format!("attribute {name:?} needs three values, got {raw:?}"),
            )),
        }
    }

    fn autonomy(&self, name: &str, default: AutonomyLevel) -> Result<AutonomyLevel, ConfigError> {
        let level: u8 = self.parse(name, default.number())?;
        AutonomyLevel::try_from(level).map_err(|e| ConfigError::invalid(self.element, e))
    }
}
