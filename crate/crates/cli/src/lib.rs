//! Headless runs, replays and the artifacts they leave behind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use uavsim::engine::export::{DeviationWriter, TrajectoryWriter};
use uavsim::world::{ScoreBoard, UavColor, UavStatus};
use uavsim::{load_config, replay_plan, EventSource, ConfigError, Engine, EventLog, ReplayError, SimConfig, WorldSnapshot};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const RUNTIME: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const REPLAY_MISMATCH: u8 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{0}")]
    Usage(String),
    #[error("replay failed: {0}")]
    Replay(#[from] ReplayError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => exit::CONFIG,
            CliError::Replay(_) => exit::REPLAY_MISMATCH,
            CliError::Io { .. } => exit::RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads `path` (or the built-in default scenario) and applies a seed override.
/// Returns the config plus any validation warnings.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<(SimConfig, Vec<String>), CliError> {
    let shown = path.map_or_else(|| "<default>".to_owned(), |p| p.display().to_string());
    let (mut config, mut warnings) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config {
                path: shown.clone(),
                source: ConfigError::Parse(e.to_string()),
            })?;
            let loaded = load_config(&text).map_err(|source| CliError::Config {
                path: shown.clone(),
                source,
            })?;
            (loaded.config, loaded.warnings)
        }
        None => (SimConfig::default(), Vec::new()),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let extra = config.validate().map_err(|source| CliError::Config { path: shown, source })?;
    for w in extra {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    Ok((config, warnings))
}

/// Where a run writes its outputs. Every field is optional.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub log_out: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub deviation: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Export every physics tick rather than every snapshot.
    pub full_rate: bool,
}

struct Recorders {
    trajectory: Option<(PathBuf, TrajectoryWriter<BufWriter<File>>)>,
    deviation: Option<(PathBuf, DeviationWriter<BufWriter<File>>)>,
    full_rate: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

impl Recorders {
    fn open(artifacts: &Artifacts) -> Result<Self, CliError> {
        let trajectory = match &artifacts.trajectory {
            Some(p) => Some((p.clone(), TrajectoryWriter::new(create(p)?).map_err(csv_err(p))?)),
            None => None,
        };
        let deviation = match &artifacts.deviation {
            Some(p) => Some((p.clone(), DeviationWriter::new(create(p)?).map_err(csv_err(p))?)),
            None => None,
        };
        Ok(Self {
            trajectory,
            deviation,
            full_rate: artifacts.full_rate,
        })
    }

    fn wants_tick(&self) -> bool {
        self.full_rate && (self.trajectory.is_some() || self.deviation.is_some())
    }

    fn record(&mut self, snapshot: &WorldSnapshot) -> Result<(), CliError> {
        if let Some((p, w)) = &mut self.trajectory {
            w.record(snapshot).map_err(csv_err(p))?;
        }
        if let Some((p, w)) = &mut self.deviation {
            w.record(snapshot).map_err(csv_err(p))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some((p, w)) = self.trajectory {
            w.finish().and_then(|mut f| f.flush()).map_err(io_err(&p))?;
        }
        if let Some((p, w)) = self.deviation {
            w.finish().and_then(|mut f| f.flush()).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

/// Drives `engine` up to `last_tick`, feeding commands from `commands_at`
/// and recording CSV rows.
fn drive<'a>(
    engine: &mut Engine,
    last_tick: u64,
    mut commands_at: impl FnMut(u64) -> &'a [uavsim::OperatorCommand],
    artifacts: &Artifacts,
) -> Result<(), CliError> {
    let mut rec = Recorders::open(artifacts)?;
    while engine.tick_count() < last_tick {
        let next = engine.tick_count() + 1;
        let out = engine.tick(commands_at(next));
        if rec.wants_tick() {
            rec.record(&engine.snapshot())?;
        } else if let Some(s) = &out.snapshot {
            rec.record(s)?;
        }
    }
    rec.finish()
}

/// Number of physics ticks covering `seconds`.
pub fn ticks_for(config: &SimConfig, seconds: f64) -> u64 {
    (seconds / config.timestep).round().max(0.0) as u64
}

/// Runs `config` headless for `seconds` with no operator input.
pub fn run_headless(config: &SimConfig, seconds: f64, artifacts: &Artifacts) -> Result<(Engine, RunSummary), CliError> {
    let mut engine = Engine::new(config.clone());
    drive(&mut engine, ticks_for(config, seconds), |_| &[], artifacts)?;
    let summary = finish_run(&engine, artifacts)?;
    Ok((engine, summary))
}

/// Re-runs a recorded log. Fails with [`CliError::Replay`] if the log does
/// not belong to `config` or the final hash differs.
pub fn run_replay(config: &SimConfig, log_path: &Path, artifacts: &Artifacts) -> Result<(Engine, RunSummary), CliError> {
    let text = std::fs::read_to_string(log_path).map_err(io_err(log_path))?;
    let log = EventLog::from_xml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", log_path.display())))?;
    replay_log(config, &log, artifacts)
}

/// As [`run_replay`], for a log already in memory.
pub fn replay_log(config: &SimConfig, log: &EventLog, artifacts: &Artifacts) -> Result<(Engine, RunSummary), CliError> {
    let plan = replay_plan(config, log)?;
    let mut engine = Engine::new(config.clone());
    drive(&mut engine, plan.last_tick, |t| plan.commands_at(t), artifacts)?;
    plan.verify(&engine.snapshot().hash())?;
    let summary = finish_run(&engine, artifacts)?;
    Ok((engine, summary))
}

/// Writes the log and summary for a finished engine.
pub fn finish_run(engine: &Engine, artifacts: &Artifacts) -> Result<RunSummary, CliError> {
    if let Some(p) = &artifacts.log_out {
        write_log(engine, p)?;
    }
    let summary = RunSummary::of(engine);
    if let Some(p) = &artifacts.summary {
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(p, text).map_err(io_err(p))?;
    }
    Ok(summary)
}

/// XML, or NDJSON when the path ends in `.ndjson`.
pub fn write_log(engine: &Engine, path: &Path) -> Result<(), CliError> {
    let log = engine.log();
    let text = if path.extension().is_some_and(|e| e == "ndjson") {
        log.to_ndjson()
    } else {
        log.to_xml()
    };
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub samples: u64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSummary {
    pub id: u32,
    pub color: UavColor,
    pub status: UavStatus,
    /// Metres.
    pub distance_flown: f64,
    /// Percent.
    pub battery: f64,
    pub waypoints_reached: u32,
    /// Absent when the UAV never flew.
    pub tracking: Option<TrackingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub scenario_hash: String,
    pub ticks: u64,
    /// Seconds of simulated time.
    pub duration: f64,
    pub final_hash: String,
    pub uavs: Vec<UavSummary>,
    pub score: ScoreBoard,
    pub operator_actions: usize,
    /// Operator actions per minute; absent without operator input.
    pub apm: Option<f64>,
}

impl RunSummary {
    pub fn of(engine: &Engine) -> Self {
        let config = engine.config();
        let uavs = engine
            .uavs()
            .iter()
            .zip(engine.tracking())
            .map(|(u, t)| UavSummary {
                id: u.id,
                color: u.color,
                status: u.status,
                distance_flown: u.distance_flown,
                battery: u.battery,
                waypoints_reached: u.waypoints_reached,
                tracking: t.mean().map(|mean| TrackingSummary {
                    samples: t.samples,
                    mean,
                    max: t.max,
                }),
            })
            .collect();
        let events = engine.events();
        let operator_actions = events
            .iter()
            .filter(|e| e.source == EventSource::Operator && e.kind.is_operator_action())
            .count();
        let duration = engine.time();
        // Every tick's events carry t in (0, duration], so the whole run is one window.
        let apm = (operator_actions > 0 && duration > 0.0).then(|| operator_actions as f64 * 60.0 / duration);
        Self {
            seed: config.seed,
            scenario_hash: config.scenario_hash(),
            ticks: engine.tick_count(),
            duration,
            final_hash: engine.snapshot().hash(),
            uavs,
            score: *engine.score(),
            operator_actions,
            apm,
        }
    }
}
