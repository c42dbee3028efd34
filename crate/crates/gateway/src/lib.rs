//! Operator gateway: JSON-over-WebSocket sessions in front of a real-time
//! engine loop.

pub mod hub;
pub mod protocol;
pub mod server;

pub use hub::{CommandQueue, Hub, Outbox, RateLimiter, Session, StampedCommand};
pub use protocol::{decode_client, decode_server, encode_client, encode_server, ClientCommand, ClientFrame, ServerFrame, ServerPayload};
pub use server::{start, EngineReport, ServeHandle, ServeOptions};
