//! XML event log, its NDJSON mirror, and replay.
//!
//! ```text
//! <log version="1" scenario-hash=".." seed="..">
//!   <event t=".." tick=".." src="operator" kind="command">{json payload}</event>
//!   <end tick=".." snapshot-hash=".."/>
//! </log>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::escape::escape;

use super::config::SimConfig;
use super::events::{CommandOutcome, EventKind, EventRecord, EventSource, OperatorCommand};
use super::snapshot::WorldSnapshot;
use super::Engine;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub version: u32,
    pub scenario_hash: String,
    pub seed: u64,
    pub events: Vec<EventRecord>,
    /// Final tick and the hash of the snapshot taken there.
    pub end: Option<(u64, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("malformed log XML: {0}")]
    Xml(String),
    #[error("log element <{element}> is invalid: {message}")]
    Invalid { element: String, message: String },
}

fn invalid(element: &str, message: impl Into<String>) -> LogError {
    LogError::Invalid {
        element: element.to_owned(),
        message: message.into(),
    }
}

impl EventLog {
    pub fn new(config: &SimConfig) -> Self {
        Self {
            version: LOG_VERSION,
            scenario_hash: config.scenario_hash(),
            seed: config.seed,
            events: Vec::new(),
            end: None,
        }
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<log version=\"{}\" scenario-hash=\"{}\" seed=\"{}\">",
            self.version,
            escape(self.scenario_hash.as_str()),
            self.seed
        );
        for e in &self.events {
            let payload = serde_json::to_string(&e.payload).expect("payload serializes");
            let _ = writeln!(
                out,
                "  <event t=\"{}\" tick=\"{}\" src=\"{}\" kind=\"{}\">{}</event>",
                e.t,
                e.tick,
                e.source,
                e.kind.code(),
                escape(payload.as_str())
            );
        }
        if let Some((tick, hash)) = &self.end {
            let _ = writeln!(out, "  <end tick=\"{tick}\" snapshot-hash=\"{}\"/>", escape(hash.as_str()));
        }
        out.push_str("</log>\n");
        out
    }

    /// One JSON object per line, same records as the XML form.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_xml(text: &str) -> Result<Self, LogError> {
        let doc = roxmltree::Document::parse(text).map_err(|e| LogError::Xml(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "log" {
            return Err(invalid(root.tag_name().name(), "root element must be <log>"));
        }
        let version = parse_attr(root, "version")?;
        let seed = parse_attr(root, "seed")?;
        let scenario_hash = root
            .attribute("scenario-hash")
            .ok_or_else(|| invalid("log", "missing scenario-hash"))?
            .to_owned();
        let mut events = Vec::new();
        let mut end = None;
        for node in root.children().filter(|n| n.is_element()) {
            match node.tag_name().name() {
                "event" => {
                    let src = node.attribute("src").ok_or_else(|| invalid("event", "missing src"))?;
                    let kind = node.attribute("kind").ok_or_else(|| invalid("event", "missing kind"))?;
                    let payload_text = node.text().unwrap_or("null");
                    events.push(EventRecord {
                        t: parse_attr(node, "t")?,
                        tick: parse_attr(node, "tick")?,
                        source: src.parse::<EventSource>().map_err(|e| invalid("event", e))?,
                        kind: EventKind::parse(kind).ok_or_else(|| invalid("event", format!("unknown kind {kind:?}")))?,
                        payload: serde_json::from_str(payload_text)
                            .map_err(|e| invalid("event", format!("payload is not JSON: {e}")))?,
                    });
                }
                "end" => {
                    let hash = node
                        .attribute("snapshot-hash")
                        .ok_or_else(|| invalid("end", "missing snapshot-hash"))?;
                    end = Some((parse_attr(node, "tick")?, hash.to_owned()));
                }
                other => return Err(invalid(other, "unknown element")),
            }
        }
        Ok(Self {
            version,
            scenario_hash,
            seed,
            events,
            end,
        })
    }

    /// Operator commands grouped by the tick they took effect at.
    pub fn commands_by_tick(&self) -> Result<BTreeMap<u64, Vec<OperatorCommand>>, ReplayError> {
        let mut out: BTreeMap<u64, Vec<OperatorCommand>> = BTreeMap::new();
        for e in &self.events {
            if e.source != EventSource::Operator || !e.kind.is_operator_action() {
                continue;
            }
            let outcome: CommandOutcome = serde_json::from_value(e.payload.clone())
                .map_err(|err| ReplayError::Payload { tick: e.tick, message: err.to_string() })?;
            out.entry(e.tick).or_default().push(outcome.command);
        }
        Ok(out)
    }
}

fn parse_attr<T: std::str::FromStr>(node: roxmltree::Node, name: &str) -> Result<T, LogError> {
    let el = node.tag_name().name();
    node.attribute(name)
        .ok_or_else(|| invalid(el, format!("missing {name}")))?
        .parse()
        .map_err(|_| invalid(el, format!("attribute {name} is not a valid number")))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("log version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("log seed {log} does not match config seed {config}")]
    Seed { log: u64, config: u64 },
    #[error("log scenario hash {log} does not match config hash {config}")]
    Scenario { log: String, config: String },
    #[error("unreadable command payload at tick {tick}: {message}")]
    Payload { tick: u64, message: String },
    #[error("final snapshot hash {actual} differs from logged {expected}")]
    SnapshotMismatch { expected: String, actual: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub final_snapshot: WorldSnapshot,
    pub hash: String,
    /// Whether the log carried an end hash to compare against.
    pub verified: bool,
}

/// Commands and stopping point recovered from a log checked against a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPlan {
    pub commands: BTreeMap<u64, Vec<OperatorCommand>>,
    pub last_tick: u64,
    /// Final snapshot hash recorded in the log, if any.
    pub expected: Option<String>,
}

impl ReplayPlan {
    pub fn commands_at(&self, tick: u64) -> &[OperatorCommand] {
        self.commands.get(&tick).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Compares a final snapshot hash with the logged one.
    pub fn verify(&self, actual: &str) -> Result<bool, ReplayError> {
        match &self.expected {
            Some(expected) if expected != actual => Err(ReplayError::SnapshotMismatch {
                expected: expected.clone(),
                actual: actual.to_owned(),
            }),
            Some(_) => Ok(true),
            None => Ok(false),
        }
    }
}

/// Checks version, seed and scenario of `log` against `config`. Without an
/// `<end>` record the run stops at the last logged event.
pub fn replay_plan(config: &SimConfig, log: &EventLog) -> Result<ReplayPlan, ReplayError> {
    if log.version != LOG_VERSION {
        return Err(ReplayError::Version {
            found: log.version,
            expected: LOG_VERSION,
        });
    }
    if log.seed != config.seed {
        return Err(ReplayError::Seed {
            log: log.seed,
            config: config.seed,
        });
    }
    let hash = config.scenario_hash();
    if log.scenario_hash != hash {
        return Err(ReplayError::Scenario {
            log: log.scenario_hash.clone(),
            config: hash,
        });
    }
    let last_tick = match &log.end {
        Some((tick, _)) => *tick,
        None => log.events.iter().map(|e| e.tick).max().unwrap_or(0),
    };
    Ok(ReplayPlan {
        commands: log.commands_by_tick()?,
        last_tick,
        expected: log.end.as_ref().map(|(_, h)| h.clone()),
    })
}

/// Re-runs `config`, injecting every logged operator command at its tick.
pub fn replay(config: &SimConfig, log: &EventLog) -> Result<ReplayOutcome, ReplayError> {
    let plan = replay_plan(config, log)?;
    let mut engine = Engine::new(config.clone());
    while engine.tick_count() < plan.last_tick {
        let next = engine.tick_count() + 1;
        engine.tick(plan.commands_at(next));
    }
    let final_snapshot = engine.snapshot();
    let hash = final_snapshot.hash();
    let verified = plan.verify(&hash)?;
    Ok(ReplayOutcome {
        final_snapshot,
        hash,
        verified,
    })
}
