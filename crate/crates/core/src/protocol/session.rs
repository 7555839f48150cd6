//! Sans-IO client session state machine.
//!
//! The async client and the capture replayer both drive this type; it owns
//! sequence numbering, phase transitions, transcript accumulation and the set
//! of unresolved tool calls.

use std::collections::BTreeSet;
use std::time::Instant;

use thiserror::Error;

use super::config::SessionConfig;
use super::message::{
    AudioPayload, Body, ErrorPayload, FramePayload, LiveMessage, Role, ToolResultPayload, TranscriptPayload, INPUT_AUDIO_RATE,
    OUTPUT_AUDIO_RATE,
};
use super::ProtocolError;
use crate::media::MediaItem;
use crate::router::format_result;
use crate::tool::{ToolCall, ToolDeclaration, ToolResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Connecting,
    Ready,
    Streaming,
    AwaitingTool,
    Closed,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Closed | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub role: Role,
    pub text: String,
    pub is_final: bool,
    /// Milliseconds since the session was created.
    pub ts: u64,
}

/// Ordered transcript. Partial entries are rewritten in place until sealed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn apply(&mut self, role: Role, text: &str, is_final: bool, ts: u64) {
        if let Some(open) = self.entries.iter_mut().rev().find(|e| e.role == role && !e.is_final) {
            open.text = text.to_string();
            open.is_final = is_final;
            open.ts = ts;
            return;
        }
        self.entries.push(TranscriptEntry { role, text: text.to_string(), is_final, ts });
    }

    /// Text of the last `n` sealed entries, oldest first.
    pub fn recent(&self, n: usize) -> Vec<String> {
        let sealed: Vec<_> = self.entries.iter().filter(|e| e.is_final).collect();
        sealed[sealed.len().saturating_sub(n)..]
            .iter()
            .map(|e| {
                let who = match e.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                format!("{who}: {}", e.text)
            })
            .collect()
    }

    fn open_per_role_ok(&self) -> bool {
        [Role::User, Role::Assistant]
            .iter()
            .all(|r| self.entries.iter().filter(|e| e.role == *r && !e.is_final).count() <= 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub messages_in: u64,
    pub messages_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub reconnects: u64,
}

/// What the owner of the session should do in response to an incoming frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Playback(AudioPayload),
    Dispatch(ToolCall),
    /// Something worth showing the operator; the session keeps running.
    Surface(ErrorPayload),
    Transcript { role: Role, text: String, is_final: bool },
    TurnComplete,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("setup already sent on this connection")]
    SetupAlreadySent,
    #[error("session is {0:?}; operation not allowed")]
    WrongPhase(Phase),
    #[error("no pending tool call with id `{0}`")]
    UnknownCall(String),
}

#[derive(Debug, Clone)]
pub struct SessionState {
    phase: Phase,
    transcript: Transcript,
    pending_calls: BTreeSet<String>,
    stats: SessionStats,
    tools: Vec<ToolDeclaration>,
    next_out_seq: u64,
    last_in_seq: Option<u64>,
    setup_sent: bool,
    started: Instant,
}

fn surface(code: &str, message: impl Into<String>) -> Effect {
    Effect::Surface(ErrorPayload { code: code.into(), message: message.into() })
}

impl SessionState {
    pub fn new(cfg: &SessionConfig) -> Self {
        Self {
            phase: Phase::Connecting,
            transcript: Transcript::default(),
            pending_calls: BTreeSet::new(),
            stats: SessionStats::default(),
            tools: cfg.tools.clone(),
            next_out_seq: 0,
            last_in_seq: None,
            setup_sent: false,
            started: Instant::now(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn pending_calls(&self) -> &BTreeSet<String> {
        &self.pending_calls
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn stamp(&mut self, body: Body) -> LiveMessage {
        let msg = LiveMessage::new(self.next_out_seq, body);
        self.next_out_seq += 1;
        self.stats.messages_out += 1;
        msg
    }

    /// Record the encoded size of an outbound frame.
    pub fn count_bytes_out(&mut self, n: usize) {
        self.stats.bytes_out += n as u64;
    }

    /// First frame of every connection.
    pub fn setup_message(&mut self, cfg: &SessionConfig) -> Result<LiveMessage, SessionError> {
        if self.setup_sent {
            return Err(SessionError::SetupAlreadySent);
        }
        if self.phase.is_terminal() {
            return Err(SessionError::WrongPhase(self.phase));
        }
        self.setup_sent = true;
        Ok(self.stamp(Body::Setup(cfg.setup_payload())))
    }

    fn check_can_send(&self) -> Result<(), SessionError> {
        match self.phase {
            Phase::Ready | Phase::Streaming | Phase::AwaitingTool => Ok(()),
            p => Err(SessionError::WrongPhase(p)),
        }
    }

    fn note_sent(&mut self) {
        if self.phase == Phase::Ready {
            self.phase = Phase::Streaming;
        }
    }

    pub fn send_media(&mut self, item: &MediaItem) -> Result<LiveMessage, SessionError> {
        self.check_can_send()?;
        let body = match item {
            MediaItem::Audio(chunk) => Body::AudioIn(AudioPayload::from_samples(&chunk.samples, INPUT_AUDIO_RATE)),
            MediaItem::Frame(frame) => {
                Body::FrameIn(FramePayload { data: frame.jpeg_bytes.clone(), capture_ts: frame.capture_ts })
            }
        };
        self.note_sent();
        Ok(self.stamp(body))
    }

    /// Typed user input, delivered as a sealed user transcript.
    pub fn send_user_text(&mut self, text: &str) -> Result<LiveMessage, SessionError> {
        self.check_can_send()?;
        let ts = self.elapsed_ms();
        self.transcript.apply(Role::User, text, true, ts);
        self.note_sent();
        Ok(self.stamp(Body::Transcript(TranscriptPayload {
            role: Role::User,
            text: text.to_string(),
            is_final: true,
        })))
    }

    pub fn submit_tool_result(&mut self, result: &ToolResult) -> Result<LiveMessage, SessionError> {
        if self.phase.is_terminal() || self.phase == Phase::Connecting {
            return Err(SessionError::WrongPhase(self.phase));
        }
        if !self.pending_calls.contains(&result.call_id) {
            return Err(SessionError::UnknownCall(result.call_id.clone()));
        }
        self.submit_formatted(format_result(result))
    }

    /// Send an already formatted tool result.
    pub fn submit_formatted(&mut self, payload: ToolResultPayload) -> Result<LiveMessage, SessionError> {
        if self.phase.is_terminal() || self.phase == Phase::Connecting {
            return Err(SessionError::WrongPhase(self.phase));
        }
        if !self.pending_calls.remove(&payload.call_id) {
            return Err(SessionError::UnknownCall(payload.call_id));
        }
        if self.pending_calls.is_empty() && self.phase == Phase::AwaitingTool {
            self.phase = Phase::Streaming;
        }
        Ok(self.stamp(Body::ToolResult(payload)))
    }

    /// Decode and handle one text frame. Undecodable frames surface an error
    /// and leave the session untouched.
    pub fn handle_frame(&mut self, text: &str) -> Vec<Effect> {
        self.stats.bytes_in += text.len() as u64;
        match LiveMessage::decode(text) {
            Ok(msg) => self.handle_incoming(msg),
            Err(e @ ProtocolError::UnknownKind { .. }) => vec![surface("unknown_kind", e.to_string())],
            Err(e) => vec![surface("malformed", e.to_string())],
        }
    }

    pub fn handle_incoming(&mut self, msg: LiveMessage) -> Vec<Effect> {
        if self.phase.is_terminal() {
            return vec![surface("closed", format!("{} received after session end", msg.kind()))];
        }
        if let Some(last) = self.last_in_seq {
            if msg.seq <= last {
                return vec![surface(
                    "sequence",
                    format!("incoming seq {} does not follow {last}", msg.seq),
                )];
            }
        }
        self.last_in_seq = Some(msg.seq);
        self.stats.messages_in += 1;
        let ts = self.elapsed_ms();

        match msg.body {
            Body::AudioOut(audio) => {
                if audio.sample_rate != OUTPUT_AUDIO_RATE {
                    return vec![surface(
                        "protocol",
                        format!("audio_out at {} Hz; expected {OUTPUT_AUDIO_RATE}", audio.sample_rate),
                    )];
                }
                vec![Effect::Playback(audio)]
            }
            Body::Transcript(t) => {
                self.transcript.apply(t.role, &t.text, t.is_final, ts);
                vec![Effect::Transcript { role: t.role, text: t.text, is_final: t.is_final }]
            }
            Body::ToolCall(call) => {
                if self.phase == Phase::Connecting {
                    return vec![surface("protocol", "tool_call before setup acknowledgment")];
                }
                if self.pending_calls.contains(&call.call_id) {
                    return vec![surface("protocol", format!("duplicate tool_call `{}`", call.call_id))];
                }
                let call = call.into_call(crate::epoch_ms());
                if let Err(why) = call.validate(&self.tools) {
                    // Still tracked: the router answers with an error result.
                    tracing::warn!(call_id = %call.call_id, %why, "tool call fails declaration check");
                }
                self.pending_calls.insert(call.call_id.clone());
                self.phase = Phase::AwaitingTool;
                vec![Effect::Dispatch(call)]
            }
            Body::TurnComplete(_) => {
                match self.phase {
                    Phase::Connecting | Phase::Streaming => self.phase = Phase::Ready,
                    _ => {}
                }
                vec![Effect::TurnComplete]
            }
            Body::Error(e) => vec![Effect::Surface(e)],
            Body::Setup(_) | Body::AudioIn(_) | Body::FrameIn(_) | Body::ToolResult(_) => {
                vec![surface("protocol", format!("{} is a client-to-server kind", msg.body.kind()))]
            }
        }
    }

    /// End the session. Unresolved calls are abandoned and returned.
    pub fn close(&mut self) -> Vec<String> {
        self.terminate(Phase::Closed)
    }

    pub fn fail(&mut self) -> Vec<String> {
        self.terminate(Phase::Failed)
    }

    fn terminate(&mut self, phase: Phase) -> Vec<String> {
        if self.phase.is_terminal() {
            return Vec::new();
        }
        self.phase = phase;
        std::mem::take(&mut self.pending_calls).into_iter().collect()
    }

    /// Prepare for a fresh connection: setup is resent and numbering restarts.
    /// Calls the old connection was waiting on are dropped and returned.
    pub fn begin_reconnect(&mut self) -> Result<Vec<String>, SessionError> {
        if self.phase == Phase::Closed {
            return Err(SessionError::WrongPhase(self.phase));
        }
        self.phase = Phase::Connecting;
        self.setup_sent = false;
        self.next_out_seq = 0;
        self.last_in_seq = None;
        self.stats.reconnects += 1;
        Ok(std::mem::take(&mut self.pending_calls).into_iter().collect())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if (self.phase == Phase::AwaitingTool) != !self.pending_calls.is_empty() {
            return Err(format!(
                "phase {:?} with {} pending calls",
                self.phase,
                self.pending_calls.len()
            ));
        }
        if !self.transcript.open_per_role_ok() {
            return Err("more than one open transcript entry for a role".into());
        }
        Ok(())
    }
}
