//! Scenarios shared by the benchmarks.

use uavsim::engine::config::{default_roster, EntityCounts};
use uavsim::{AutonomyLevel, Engine, SimConfig};

/// Default world with `uavs` airframes, entities included.
pub fn scenario(uavs: usize) -> SimConfig {
    let mut config = SimConfig::default();
    config.uavs = default_roster(&config.base, uavs, AutonomyLevel::Sequence);
    config
}

/// Engine warmed past its first snapshot.
pub fn warm_engine(uavs: usize) -> Engine {
    let mut engine = Engine::new(scenario(uavs));
    engine.run_ticks(60);
    engine
}

/// Same airframes with no ground entities.
pub fn empty_world(uavs: usize) -> SimConfig {
    let mut config = scenario(uavs);
    config.entities.random = EntityCounts::NONE;
    config
}
