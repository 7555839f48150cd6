//! Live session protocol: wire format, client state machine, playback queue,
//! capture logs and the async WebSocket client.

mod capture;
mod client;
mod config;
mod message;
mod playback;
mod session;

pub use capture::{replay_capture, CaptureLine, CaptureLog, Direction, ReplayReport};
pub use client::{backoff_schedule, ClientError, LiveClient};
pub use config::{SessionConfig, DEFAULT_SYSTEM_PROMPT};
pub use message::{
    AudioPayload, Body, ErrorPayload, FramePayload, LiveMessage, MessageKind, Role, Scalar, SetupPayload,
    ToolCallPayload, ToolResultPayload, TranscriptPayload, TurnCompletePayload, INPUT_AUDIO_RATE,
    OUTPUT_AUDIO_RATE,
};
pub use playback::{playback_schedule, PlaybackQueue, ScheduledChunk};
pub use session::{Effect, Phase, SessionError, SessionState, SessionStats, Transcript, TranscriptEntry};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message kind `{kind}` (seq {seq})")]
    UnknownKind { kind: String, seq: u64 },
}
