//! Live bridge: runs a cooperation session in real time with a human partner
//! connected over a WebSocket, streaming board state, heatmaps and metrics.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Envelope, ServerMessage, PROTOCOL_VERSION};
pub use server::{router, serve, serve_listener, ServeConfig};
pub use session::{CommandHold, Handle, LiveSession, OutQueue};
