//! Deterministic multi-quadrotor search-and-rescue simulation.

// NaN must fail the checks that use negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod navigation;
pub mod telemetry;
pub mod world;

pub use nalgebra;

pub use control::{Gains, ReferenceSample};
pub use dynamics::{PhysicalParams, RigidState, RotorSpeeds, Wrench};
pub use engine::config::{load_config, LoadedConfig, SimConfig};
pub use engine::events::{EventKind, EventRecord, EventSource, OperatorAction, OperatorCommand};
pub use engine::log::{replay, replay_plan, EventLog, ReplayError, ReplayPlan};
pub use engine::snapshot::WorldSnapshot;
pub use engine::{Engine, TickOutput};
pub use error::ConfigError;
pub use navigation::{AutonomyLevel, DirectControlInput, RejectReason};
