//! Shared state between the engine thread and network sessions: the
//! stamped command queue, per-session outboxes and the single-writer slot.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::Notify;

use uavsim::engine::events::{EventRecord, OperatorCommand};
use uavsim::{SimConfig, WorldSnapshot};

use crate::protocol::{
    encode_server_raw, Ack, ClientCommand, ClientFrame, GatewayReject, Hello, Reject, Role, SchemaError,
    ServerPayload, UavInfo, Welcome, PROTOCOL_VERSION,
};

pub const DEFAULT_RATE_LIMIT: usize = 20;

/// Command accepted by the gateway, bound to the tick it will run at.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedCommand {
    pub tick: u64,
    pub session: u64,
    pub seq: u64,
    pub command: OperatorCommand,
}

struct QueueState {
    /// Tick the engine will run next.
    next_tick: u64,
    pending: Vec<StampedCommand>,
}

/// Ordered inbound queue. Stamping and draining share one lock, so a
/// command's stamp is exactly the tick that consumes it.
pub struct CommandQueue {
    state: Mutex<QueueState>,
}

impl CommandQueue {
    pub fn new(first_tick: u64) -> Self {
        Self {
            state: Mutex::new(QueueState {
                next_tick: first_tick,
                pending: Vec::new(),
            }),
        }
    }

    /// Stamps and enqueues; returns the stamp.
    pub fn push(&self, session: u64, seq: u64, command: OperatorCommand) -> u64 {
        let mut s = self.state.lock().expect("queue lock");
        let tick = s.next_tick;
        s.pending.push(StampedCommand {
            tick,
            session,
            seq,
            command,
        });
        tick
    }

    /// Takes everything for the next tick and advances the stamp.
    pub fn take_next(&self) -> (u64, Vec<StampedCommand>) {
        let mut s = self.state.lock().expect("queue lock");
        let tick = s.next_tick;
        s.next_tick += 1;
        (tick, std::mem::take(&mut s.pending))
    }

    pub fn next_tick(&self) -> u64 {
        self.state.lock().expect("queue lock").next_tick
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Outgoing {
    Snapshot(Arc<str>),
    Event(Arc<str>),
    Direct(ServerPayload),
}

impl Outgoing {
    fn render(&self, seq: u64) -> String {
        match self {
            Self::Snapshot(json) => encode_server_raw("snapshot", seq, json),
            Self::Event(json) => encode_server_raw("event", seq, json),
            Self::Direct(p) => encode_server_raw(p.kind(), seq, &p.payload_json()),
        }
    }
}

#[derive(Default)]
struct OutboxState {
    queue: VecDeque<Outgoing>,
    next_seq: u64,
    closed: bool,
    snapshots_dropped: u64,
}

/// Per-session outbound buffer. A new snapshot replaces any snapshot still
/// waiting; events and direct replies are never dropped.
#[derive(Default)]
pub struct Outbox {
    state: Mutex<OutboxState>,
    notify: Notify,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, item: Outgoing) {
        let mut s = self.state.lock().expect("outbox lock");
        if s.closed {
            return;
        }
        if matches!(item, Outgoing::Snapshot(_)) {
            let before = s.queue.len();
            s.queue.retain(|o| !matches!(o, Outgoing::Snapshot(_)));
            s.snapshots_dropped += (before - s.queue.len()) as u64;
        }
        s.queue.push_back(item);
        drop(s);
        self.notify.notify_one();
    }

    pub fn push_reply(&self, payload: ServerPayload) {
        self.push(Outgoing::Direct(payload));
    }

    /// Renders every waiting message with consecutive sequence numbers.
    pub fn drain(&self) -> Vec<String> {
        let mut s = self.state.lock().expect("outbox lock");
        let items: Vec<_> = s.queue.drain(..).collect();
        items
            .iter()
            .map(|item| {
                let seq = s.next_seq;
                s.next_seq += 1;
                item.render(seq)
            })
            .collect()
    }

    /// Waits until something is queued or the outbox is closed. Returns
    /// `false` once closed and empty.
    pub async fn ready(&self) -> bool {
        loop {
            let notified = self.notify.notified();
            {
                let s = self.state.lock().expect("outbox lock");
                if !s.queue.is_empty() {
                    return true;
                }
                if s.closed {
                    return false;
                }
            }
            notified.await;
        }
    }

    pub fn close(&self) {
        self.state.lock().expect("outbox lock").closed = true;
        self.notify.notify_one();
    }

    pub fn pending(&self) -> usize {
        self.state.lock().expect("outbox lock").queue.len()
    }

    pub fn snapshots_dropped(&self) -> u64 {
        self.state.lock().expect("outbox lock").snapshots_dropped
    }
}

/// Sliding one-second window over command arrivals.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    arrivals: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn new(limit: usize, window: Duration) -> Self {
        Self {
            limit,
            window,
            arrivals: VecDeque::new(),
        }
    }

    /// Records an arrival at `now` if the window has room.
    pub fn allow(&mut self, now: Instant) -> bool {
        while let Some(&front) = self.arrivals.front() {
            if now.duration_since(front) >= self.window {
                self.arrivals.pop_front();
            } else {
                break;
            }
        }
        if self.arrivals.len() >= self.limit {
            return false;
        }
        self.arrivals.push_back(now);
        true
    }
}

/// Per-connection state.
pub struct Session {
    pub id: u64,
    pub role: Option<Role>,
    pub selection: Vec<u32>,
    pub outbox: Arc<Outbox>,
    limiter: RateLimiter,
}

impl Session {
    pub fn is_operator(&self) -> bool {
        self.role == Some(Role::Operator)
    }
}

/// Static facts sent in every `welcome`.
#[derive(Debug, Clone)]
struct WorldInfo {
    timestep: f64,
    snapshot_rate: f64,
    world: uavsim::world::WorldBounds,
    base: uavsim::world::HomeBase,
    uavs: Vec<UavInfo>,
}

pub struct Hub {
    info: WorldInfo,
    rate_limit: usize,
    queue: CommandQueue,
    sessions: Mutex<BTreeMap<u64, Arc<Outbox>>>,
    writer: Mutex<Option<u64>>,
    next_session: AtomicU64,
    latest_snapshot: Mutex<Option<Arc<str>>>,
}

impl Hub {
    /// `next_tick` is the tick the engine will run next.
    pub fn new(config: &SimConfig, next_tick: u64) -> Self {
        Self::with_rate_limit(config, next_tick, DEFAULT_RATE_LIMIT)
    }

    pub fn with_rate_limit(config: &SimConfig, next_tick: u64, rate_limit: usize) -> Self {
        Self {
            info: WorldInfo {
                timestep: config.timestep,
                snapshot_rate: config.logging.snapshot_rate,
                world: config.bounds,
                base: config.base,
                uavs: config
                    .uavs
                    .iter()
                    .enumerate()
                    .map(|(i, u)| UavInfo {
                        id: i as u32 + 1,
                        color: u.color,
                        autonomy: u.autonomy,
                    })
                    .collect(),
            },
            rate_limit,
            queue: CommandQueue::new(next_tick),
            sessions: Mutex::new(BTreeMap::new()),
            writer: Mutex::new(None),
            next_session: AtomicU64::new(1),
            latest_snapshot: Mutex::new(None),
        }
    }

    pub fn queue(&self) -> &CommandQueue {
        &self.queue
    }

    pub fn open_session(&self) -> Session {
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        let outbox = Arc::new(Outbox::new());
        self.sessions.lock().expect("sessions lock").insert(id, outbox.clone());
        Session {
            id,
            role: None,
            selection: Vec::new(),
            outbox,
            limiter: RateLimiter::new(self.rate_limit, Duration::from_secs(1)),
        }
    }

    /// Drops the session and frees the writer slot if it held it.
    pub fn close_session(&self, session: &Session) {
        session.outbox.close();
        self.sessions.lock().expect("sessions lock").remove(&session.id);
        let mut w = self.writer.lock().expect("writer lock");
        if *w == Some(session.id) {
            *w = None;
        }
    }

    /// Closes every outbox; writers flush what is queued and hang up.
    pub fn close_all(&self) {
        for outbox in self.sessions.lock().expect("sessions lock").values() {
            outbox.close();
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    pub fn writer(&self) -> Option<u64> {
        *self.writer.lock().expect("writer lock")
    }

    /// Fans a snapshot out to every live session; serialized once.
    pub fn broadcast_snapshot(&self, snapshot: &WorldSnapshot) {
        let json: Arc<str> = snapshot.to_json().into();
        *self.latest_snapshot.lock().expect("snapshot lock") = Some(json.clone());
        for outbox in self.sessions.lock().expect("sessions lock").values() {
            outbox.push(Outgoing::Snapshot(json.clone()));
        }
    }

    pub fn broadcast_event(&self, event: &EventRecord) {
        let json: Arc<str> = serde_json::to_string(event).expect("event serializes").into();
        for outbox in self.sessions.lock().expect("sessions lock").values() {
            outbox.push(Outgoing::Event(json.clone()));
        }
    }

    /// Handles one raw text frame from a session.
    pub fn handle_text(&self, session: &mut Session, text: &str, now: Instant) {
        match crate::protocol::decode_client(text) {
            Ok(frame) => self.handle_command(session, frame, now),
            Err(err) => session.outbox.push_reply(schema_reject(text, err)),
        }
    }

    /// Validates, stamps and enqueues a command; replies go to the session
    /// outbox. Autonomy rejections arrive later as engine events.
    pub fn handle_command(&self, session: &mut Session, frame: ClientFrame, now: Instant) {
        let reply = match self.admit(session, &frame, now) {
            Ok(reply) => reply,
            Err((reason, detail)) => ServerPayload::Reject(Reject {
                ack_seq: Some(frame.seq),
                reason,
                detail,
                path: None,
            }),
        };
        session.outbox.push_reply(reply);
        if matches!(frame.command, ClientCommand::Hello(_)) && session.role.is_some() {
            if let Some(json) = self.latest_snapshot.lock().expect("snapshot lock").clone() {
                session.outbox.push(Outgoing::Snapshot(json));
            }
        }
    }

    fn admit(
        &self,
        session: &mut Session,
        frame: &ClientFrame,
        now: Instant,
    ) -> Result<ServerPayload, (GatewayReject, String)> {
        if let ClientCommand::Hello(hello) = &frame.command {
            return self.hello(session, hello);
        }
        if session.role.is_none() {
            return Err((GatewayReject::HelloRequired, "send hello first".into()));
        }
        let ids = frame.command.uav_ids().unwrap_or_default();
        if let Some(bad) = ids.iter().find(|id| **id == 0 || **id as usize > self.info.uavs.len()) {
            return Err((GatewayReject::UnknownId, format!("no UAV with id {bad}")));
        }
        let Some(command) = frame.command.to_operator_command() else {
            // select: viewing only, no engine effect.
            session.selection = ids.to_vec();
            return Ok(ServerPayload::Ack(Ack {
                ack_seq: frame.seq,
                tick: self.queue.next_tick(),
            }));
        };
        if !session.is_operator() {
            return Err((GatewayReject::NotOperator, "observers cannot command UAVs".into()));
        }
        if !session.limiter.allow(now) {
            return Err((
                GatewayReject::RateLimited,
                format!("more than {} commands in one second", self.rate_limit),
            ));
        }
        let tick = self.queue.push(session.id, frame.seq, command);
        Ok(ServerPayload::Ack(Ack { ack_seq: frame.seq, tick }))
    }

    fn hello(&self, session: &mut Session, hello: &Hello) -> Result<ServerPayload, (GatewayReject, String)> {
        if session.role.is_some() {
            return Err((GatewayReject::DuplicateHello, "session already greeted".into()));
        }
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err((
                GatewayReject::ProtocolVersion,
                format!("server speaks version {PROTOCOL_VERSION}"),
            ));
        }
        let role = match hello.role {
            Role::Observer => Role::Observer,
            Role::Operator => {
                let mut w = self.writer.lock().expect("writer lock");
                if w.is_none() {
                    *w = Some(session.id);
                    Role::Operator
                } else {
                    Role::Observer
                }
            }
        };
        session.role = Some(role);
        Ok(ServerPayload::Welcome(Welcome {
            session_id: session.id,
            role,
            protocol_version: PROTOCOL_VERSION,
            tick: self.queue.next_tick(),
            timestep: self.info.timestep,
            snapshot_rate: self.info.snapshot_rate,
            world: self.info.world,
            base: self.info.base,
            uavs: self.info.uavs.clone(),
        }))
    }
}

fn schema_reject(text: &str, err: SchemaError) -> ServerPayload {
    let ack_seq = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("seq").and_then(|s| s.as_u64()));
    ServerPayload::Reject(Reject {
        ack_seq,
        reason: GatewayReject::Malformed,
        detail: err.message,
        path: Some(err.path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{decode_server, ServerFrame, WaypointPayload};

    fn hub() -> Hub {
        Hub::new(&SimConfig::default(), 1)
    }

    fn replies(session: &Session) -> Vec<ServerFrame> {
        session
            .outbox
            .drain()
            .iter()
            .map(|t| decode_server(t).unwrap())
            .collect()
    }

    fn hello(hub: &Hub, session: &mut Session, role: &str) -> ServerFrame {
        let text = format!(r#"{{"kind":"hello","seq":0,"payload":{{"role":"{role}","protocol_version":1}}}}"#);
        hub.handle_text(session, &text, Instant::now());
        replies(session).remove(0)
    }

    fn waypoint(seq: u64, id: u32) -> ClientFrame {
        ClientFrame {
            seq,
            command: ClientCommand::SetWaypoint(WaypointPayload {
                uav_ids: vec![id],
                x: 510.0,
                y: 500.0,
                z: 10.0,
            }),
        }
    }

    #[test]
    fn set_waypoint_acked_with_stamp() {
        let hub = hub();
        let mut s = hub.open_session();
        hello(&hub, &mut s, "operator");
        hub.handle_command(&mut s, waypoint(1, 1), Instant::now());
        let r = replies(&s);
        assert_eq!(r[0].payload, ServerPayload::Ack(Ack { ack_seq: 1, tick: 1 }));
        let (tick, cmds) = hub.queue().take_next();
        assert_eq!(tick, 1);
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].tick, 1);
        hub.handle_command(&mut s, waypoint(2, 2), Instant::now());
        assert_eq!(replies(&s)[0].payload, ServerPayload::Ack(Ack { ack_seq: 2, tick: 2 }));
    }

    #[test]
    fn unknown_uav_rejected() {
        let hub = hub();
        let mut s = hub.open_session();
        hello(&hub, &mut s, "operator");
        hub.handle_command(&mut s, waypoint(4, 99), Instant::now());
        match &replies(&s)[0].payload {
            ServerPayload::Reject(r) => {
                assert_eq!(r.reason, GatewayReject::UnknownId);
                assert_eq!(r.ack_seq, Some(4));
            }
            other => panic!("{other:?}"),
        }
        assert!(hub.queue().take_next().1.is_empty());
    }

    #[test]
    fn twenty_first_command_in_a_second_is_rate_limited() {
        let hub = hub();
        let mut s = hub.open_session();
        hello(&hub, &mut s, "operator");
        let t0 = Instant::now();
        for i in 0..21 {
            hub.handle_command(&mut s, waypoint(i, 1), t0 + Duration::from_millis(i * 40));
        }
        let r = replies(&s);
        assert!(r[..20].iter().all(|f| matches!(f.payload, ServerPayload::Ack(_))));
        assert!(matches!(&r[20].payload, ServerPayload::Reject(x) if x.reason == GatewayReject::RateLimited));
        // The window slides.
        hub.handle_command(&mut s, waypoint(30, 1), t0 + Duration::from_millis(1001));
        assert!(matches!(replies(&s)[0].payload, ServerPayload::Ack(_)));
    }

    #[test]
    fn command_before_hello() {
        let hub = hub();
        let mut s = hub.open_session();
        hub.handle_command(&mut s, waypoint(1, 1), Instant::now());
        assert!(matches!(&replies(&s)[0].payload, ServerPayload::Reject(x) if x.reason == GatewayReject::HelloRequired));
    }

    #[test]
    fn single_writer_rule() {
        let hub = hub();
        let mut a = hub.open_session();
        let mut b = hub.open_session();
        let wa = hello(&hub, &mut a, "operator");
        let wb = hello(&hub, &mut b, "operator");
        assert!(matches!(wa.payload, ServerPayload::Welcome(ref w) if w.role == Role::Operator));
        assert!(matches!(wb.payload, ServerPayload::Welcome(ref w) if w.role == Role::Observer));
        hub.handle_command(&mut b, waypoint(1, 1), Instant::now());
        assert!(matches!(&replies(&b)[0].payload, ServerPayload::Reject(x) if x.reason == GatewayReject::NotOperator));
        hub.close_session(&a);
        assert_eq!(hub.writer(), None);
        let mut c = hub.open_session();
        let wc = hello(&hub, &mut c, "operator");
        assert!(matches!(wc.payload, ServerPayload::Welcome(ref w) if w.role == Role::Operator));
    }

    #[test]
    fn observer_may_select() {
        let hub = hub();
        let mut s = hub.open_session();
        hello(&hub, &mut s, "observer");
        hub.handle_text(
            &mut s,
            r#"{"kind":"select","seq":5,"payload":{"uav_ids":[2]}}"#,
            Instant::now(),
        );
        assert!(matches!(replies(&s)[0].payload, ServerPayload::Ack(_)));
        assert_eq!(s.selection, vec![2]);
    }

    #[test]
    fn malformed_frame_reports_path() {
        let hub = hub();
        let mut s = hub.open_session();
        hub.handle_text(&mut s, r#"{"seq":3,"payload":{}}"#, Instant::now());
        match &replies(&s)[0].payload {
            ServerPayload::Reject(r) => {
                assert_eq!(r.reason, GatewayReject::Malformed);
                assert_eq!(r.path.as_deref(), Some("/kind"));
                assert_eq!(r.ack_seq, Some(3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_protocol_version() {
        let hub = hub();
        let mut s = hub.open_session();
        hub.handle_text(
            &mut s,
            r#"{"kind":"hello","seq":0,"payload":{"role":"operator","protocol_version":9}}"#,
            Instant::now(),
        );
        assert!(matches!(&replies(&s)[0].payload, ServerPayload::Reject(x) if x.reason == GatewayReject::ProtocolVersion));
        assert_eq!(hub.writer(), None);
    }

    fn snap(tick: u64) -> WorldSnapshot {
        let mut engine = uavsim::Engine::new(SimConfig::default());
        engine.run_ticks(tick);
        engine.snapshot()
    }

    #[test]
    fn broadcast_reaches_every_session_identically() {
        let hub = hub();
        let a = hub.open_session();
        let b = hub.open_session();
        hub.broadcast_snapshot(&snap(3));
        let ra = replies(&a);
        let rb = replies(&b);
        assert_eq!(ra.len(), 1);
        assert_eq!(ra, rb);
    }

    #[test]
    fn slow_session_gets_latest_snapshot_and_all_events() {
        let hub = hub();
        let s = hub.open_session();
        let mut engine = uavsim::Engine::new(SimConfig::default());
        let mut events = 0;
        for i in 0..5 {
            engine.run_ticks(3);
            hub.broadcast_snapshot(&engine.snapshot());
            let e = EventRecord {
                t: i as f64,
                tick: i,
                source: uavsim::EventSource::System,
                kind: uavsim::EventKind::Landed,
                payload: serde_json::json!({ "n": i }),
            };
            hub.broadcast_event(&e);
            events += 1;
        }
        let frames = replies(&s);
        let snapshots: Vec<_> = frames
            .iter()
            .filter_map(|f| match &f.payload {
                ServerPayload::Snapshot(s) => Some(s.tick),
                _ => None,
            })
            .collect();
        assert_eq!(snapshots, vec![15]);
        assert_eq!(frames.len() - 1, events);
        assert!(frames.windows(2).all(|w| w[1].seq == w[0].seq + 1));
        assert_eq!(s.outbox.snapshots_dropped(), 4);
    }

    #[test]
    fn zero_sessions_broadcast_is_noop() {
        let hub = hub();
        hub.broadcast_snapshot(&snap(0));
        assert_eq!(hub.session_count(), 0);
    }

    #[test]
    fn hello_delivers_latest_snapshot() {
        let hub = hub();
        hub.broadcast_snapshot(&snap(6));
        let mut s = hub.open_session();
        hub.handle_text(
            &mut s,
            r#"{"kind":"hello","seq":0,"payload":{"role":"observer","protocol_version":1}}"#,
            Instant::now(),
        );
        let r = replies(&s);
        assert!(matches!(r[0].payload, ServerPayload::Welcome(_)));
        assert!(matches!(r[1].payload, ServerPayload::Snapshot(ref s) if s.tick == 6));
    }
}
