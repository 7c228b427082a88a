//! JSON text messages exchanged with live clients. Every message is an
//! envelope `{"type": .., "session": .., "seq": .., <payload fields>}`.

use serde::{Deserialize, Serialize};

use evl_core::board::{BoardConfig, BoardState, EnvKind, Preset, Walls};
use evl_core::grid::GridDump;
use evl_core::metrics::MetricsRecord;
use evl_core::train::Method;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    /// Session id; empty in a client `hello` that opens a session.
    #[serde(default)]
    pub session: String,
    /// Per-sender monotonic sequence number.
    pub seq: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { protocol: u32 },
    /// Tilt-rate command, each axis in `[-1, 1]`.
    HumanAction { roll: f64, pitch: f64 },
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collecting,
    Updating,
    Idle,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedProtocol,
    UnknownSession,
    NotReady,
    Refused,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardInfo {
    pub half_width: f64,
    pub half_height: f64,
    pub walls: Walls,
    pub max_tilt: f64,
    pub sample_time: f64,
    pub episode_steps: usize,
}

impl From<&BoardConfig> for BoardInfo {
    fn from(b: &BoardConfig) -> Self {
        Self {
            half_width: b.half_width,
            half_height: b.half_height,
            walls: b.walls,
            max_tilt: b.max_tilt,
            sample_time: b.sample_time,
            episode_steps: b.episode_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: u32,
        env: EnvKind,
        preset: Preset,
        method: Method,
        board: BoardInfo,
        validation_steps: usize,
    },
    State {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
        roll: f64,
        pitch: f64,
        step: usize,
        iteration: usize,
    },
    /// A heatmap in row-major order, bottom row first; `checksum` matches the
    /// grid-dump checksum of the same values.
    Field {
        kind: String,
        iteration: usize,
        resolution: [usize; 2],
        /// `[x_min, x_max, y_min, y_max]`.
        bounds: [f64; 4],
        values: Vec<f64>,
        checksum: String,
    },
    Metrics {
        iteration: usize,
        #[serde(rename = "U")]
        u: f64,
        #[serde(rename = "L")]
        l: f64,
        delta: f64,
        sigma: f64,
        phi: f64,
        /// Sent once, for the frozen validation episode.
        #[serde(rename = "final")]
        is_final: bool,
    },
    Phase {
        phase: Phase,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn state(s: &BoardState, iteration: usize) -> Self {
        Self::State {
            x: s.ball_pos[0],
            y: s.ball_pos[1],
            vx: s.ball_vel[0],
            vy: s.ball_vel[1],
            roll: s.tilt[0],
            pitch: s.tilt[1],
            step: s.step_index,
            iteration,
        }
    }

    pub fn field(dump: &GridDump) -> Self {
        let g = &dump.grid;
        Self::Field {
            kind: dump.kind.clone(),
            iteration: dump.iteration,
            resolution: [g.gx, g.gy],
            bounds: [-g.half_width, g.half_width, -g.half_height, g.half_height],
            values: dump.values.clone(),
            checksum: dump.checksum(),
        }
    }

    pub fn metrics(m: &MetricsRecord, is_final: bool) -> Self {
        Self::Metrics {
            iteration: m.iteration_index,
            u: m.specificity,
            l: m.path_length,
            delta: m.density_ratio,
            sigma: m.human_effort,
            phi: m.agreement_ratio,
            is_final,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Self::Error {
            code,
            message: message.into(),
        }
    }

    pub fn is_state(&self) -> bool {
        matches!(self, Self::State { .. })
    }

    /// Structural checks a receiver applies after decoding.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if let Self::Field { resolution, values, .. } = self {
            if values.len() != resolution[0] * resolution[1] {
                return Err(ProtocolError::malformed(format!(
                    "field carries {} values for a {}x{} grid",
                    values.len(),
                    resolution[0],
                    resolution[1]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn malformed(message: impl Into<String>) -> Self {
        Self {
            code: ErrorCode::Malformed,
            message: message.into(),
        }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::error(self.code, self.message.clone())
    }
}

/// Decodes and checks a client message.
pub fn parse_client(text: &str) -> Result<Envelope<ClientMessage>, ProtocolError> {
    let env: Envelope<ClientMessage> = serde_json::from_str(text).map_err(|e| ProtocolError::malformed(e.to_string()))?;
    match env.body {
        ClientMessage::HumanAction { roll, pitch } if !(roll.is_finite() && pitch.is_finite()) => {
            Err(ProtocolError::malformed("human_action values must be finite"))
        }
        ClientMessage::Hello { protocol } if protocol != PROTOCOL_VERSION => Err(ProtocolError {
            code: ErrorCode::UnsupportedProtocol,
            message: format!("server speaks protocol {PROTOCOL_VERSION}, client asked for {protocol}"),
        }),
        _ => Ok(env),
    }
}

/// Decodes and checks a server message.
pub fn parse_server(text: &str) -> Result<Envelope<ServerMessage>, ProtocolError> {
    let env: Envelope<ServerMessage> = serde_json::from_str(text).map_err(|e| ProtocolError::malformed(e.to_string()))?;
    env.body.validate()?;
    Ok(env)
}

pub fn encode<T: Serialize>(env: &Envelope<T>) -> String {
    serde_json::to_string(env).expect("wire messages always serialize")
}
