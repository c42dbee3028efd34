//! Real-time engine loop and the WebSocket listener.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use uavsim::engine::events::OperatorCommand;
use uavsim::Engine;

use crate::hub::{Hub, DEFAULT_RATE_LIMIT};

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Stop after this many ticks; run until stopped otherwise.
    pub max_ticks: Option<u64>,
    pub rate_limit: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            max_ticks: None,
            rate_limit: DEFAULT_RATE_LIMIT,
        }
    }
}

/// Timing record of a real-time run.
pub struct EngineReport {
    pub engine: Engine,
    pub ticks: u64,
    pub snapshots: u64,
    /// Ticks that completed after their wall-clock deadline.
    pub overruns: u64,
    pub max_tick_time: Duration,
    pub wall_time: Duration,
}

/// Runs the engine at wall-clock pace on its own thread. Commands come from
/// the hub queue; snapshots and events go out through the hub.
pub fn spawn_engine_loop(
    mut engine: Engine,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
    max_ticks: Option<u64>,
) -> JoinHandle<EngineReport> {
    std::thread::Builder::new()
        .name("engine".into())
        .spawn(move || {
            let dt = Duration::from_secs_f64(engine.config().timestep);
            let start = Instant::now();
            let (mut ticks, mut snapshots, mut overruns) = (0u64, 0u64, 0u64);
            let mut max_tick_time = Duration::ZERO;
            while !stop.load(Ordering::Relaxed) && max_ticks.is_none_or(|m| ticks < m) {
                let began = Instant::now();
                let (tick, stamped) = hub.queue().take_next();
                debug_assert_eq!(tick, engine.tick_count() + 1);
                let commands: Vec<OperatorCommand> = stamped.into_iter().map(|c| c.command).collect();
                let out = engine.tick(&commands);
                for e in &out.events {
                    hub.broadcast_event(e);
                }
                if let Some(s) = &out.snapshot {
                    hub.broadcast_snapshot(s);
                    snapshots += 1;
                }
                ticks += 1;
                let now = Instant::now();
                max_tick_time = max_tick_time.max(now - began);
                let deadline = start + dt * ticks as u32;
                if now > deadline {
                    overruns += 1;
                } else {
                    std::thread::sleep(deadline - now);
                }
            }
            hub.close_all();
            EngineReport {
                engine,
                ticks,
                snapshots,
                overruns,
                max_tick_time,
                wall_time: start.elapsed(),
            }
        })
        .expect("spawn engine thread")
}

/// Accepts WebSocket sessions until `shutdown` fires.
pub async fn accept_loop(listener: TcpListener, hub: Arc<Hub>, mut shutdown: oneshot::Receiver<()>) {
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tokio::spawn(handle_connection(stream, peer, hub.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
        }
    }
}

async fn handle_connection(stream: TcpStream, peer: SocketAddr, hub: Arc<Hub>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("handshake with {peer} failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let mut session = hub.open_session();
    info!(session = session.id, %peer, "session opened");
    let outbox = session.outbox.clone();
    let writer = tokio::spawn(async move {
        while outbox.ready().await {
            for text in outbox.drain() {
                if sink.send(Message::Text(text)).await.is_err() {
                    return;
                }
            }
        }
        let _ = sink.close().await;
    });
    while let Some(msg) = source.next().await {
        match msg {
            Ok(Message::Text(text)) => hub.handle_text(&mut session, &text, Instant::now()),
            Ok(Message::Binary(_)) => hub.handle_text(&mut session, "binary frame", Instant::now()),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    hub.close_session(&session);
    info!(session = session.id, "session closed");
    let _ = writer.await;
}

/// A running gateway: listener plus real-time engine thread.
pub struct ServeHandle {
    local_addr: SocketAddr,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
    engine: JoinHandle<EngineReport>,
    shutdown: oneshot::Sender<()>,
    server: tokio::task::JoinHandle<()>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Flag that ends the run when set.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Waits for the engine loop to end, then closes the listener.
    pub async fn wait(self) -> EngineReport {
        let engine = self.engine;
        let report = tokio::task::spawn_blocking(move || engine.join().expect("engine thread panicked"))
            .await
            .expect("join engine thread");
        let _ = self.shutdown.send(());
        let _ = self.server.await;
        report
    }

    pub async fn stop(self) -> EngineReport {
        self.stop.store(true, Ordering::Relaxed);
        self.wait().await
    }
}

/// Binds `addr` and starts serving `engine`.
pub async fn start(engine: Engine, addr: SocketAddr, options: ServeOptions) -> std::io::Result<ServeHandle> {
    let listener = TcpListener::bind(addr).await?;
    let local_addr = listener.local_addr()?;
    let hub = Arc::new(Hub::with_rate_limit(
        engine.config(),
        engine.tick_count() + 1,
        options.rate_limit,
    ));
    let (shutdown, rx) = oneshot::channel();
    let server = tokio::spawn(accept_loop(listener, hub.clone(), rx));
    let stop = Arc::new(AtomicBool::new(false));
    let engine = spawn_engine_loop(engine, hub.clone(), stop.clone(), options.max_ticks);
    info!(%local_addr, "gateway listening");
    Ok(ServeHandle {
        local_addr,
        hub,
        stop,
        engine,
        shutdown,
        server,
    })
}
