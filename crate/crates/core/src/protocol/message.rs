//! JSON-per-frame wire format.
//!
//! Every frame is one compact JSON object `{"seq":N,"kind":K,"payload":{..}}`.
//! Binary payloads travel as standard base64. Encoding is canonical (payload
//! keys sorted), so `encode(decode(s)) == s` for any `s` produced by `encode`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::tool::{StepKind, ToolCall, ToolDeclaration, ToolStatus};

use super::ProtocolError;

pub const INPUT_AUDIO_RATE: u32 = 16_000;
pub const OUTPUT_AUDIO_RATE: u32 = 24_000;

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Setup,
    AudioIn,
    FrameIn,
    AudioOut,
    Transcript,
    ToolCall,
    ToolResult,
    TurnComplete,
    Error,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::Setup,
        MessageKind::AudioIn,
        MessageKind::FrameIn,
        MessageKind::AudioOut,
        MessageKind::Transcript,
        MessageKind::ToolCall,
        MessageKind::ToolResult,
        MessageKind::TurnComplete,
        MessageKind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Setup => "setup",
            MessageKind::AudioIn => "audio_in",
            MessageKind::FrameIn => "frame_in",
            MessageKind::AudioOut => "audio_out",
            MessageKind::Transcript => "transcript",
            MessageKind::ToolCall => "tool_call",
            MessageKind::ToolResult => "tool_result",
            MessageKind::TurnComplete => "turn_complete",
            MessageKind::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generation parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupPayload {
    pub model_id: String,
    pub system_prompt: String,
    #[serde(default)]
    pub generation_params: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub tools: Vec<ToolDeclaration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioPayload {
    /// Little-endian PCM16 mono.
    #[serde(with = "b64")]
    pub data: Vec<u8>,
    pub sample_rate: u32,
}

impl AudioPayload {
    pub fn from_samples(samples: &[i16], sample_rate: u32) -> Self {
        Self { data: samples.iter().flat_map(|s| s.to_le_bytes()).collect(), sample_rate }
    }

    pub fn samples(&self) -> Vec<i16> {
        self.data.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect()
    }

    pub fn duration_us(&self) -> u64 {
        if self.sample_rate == 0 {
            return 0;
        }
        (self.data.len() as u64 / 2) * 1_000_000 / u64::from(self.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePayload {
    #[serde(with = "b64")]
    pub data: Vec<u8>,
    pub capture_ts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptPayload {
    pub role: Role,
    pub text: String,
    #[serde(rename = "final")]
    pub is_final: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallPayload {
    pub call_id: String,
    pub name: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl ToolCallPayload {
    pub fn into_call(self, issued_at: u64) -> ToolCall {
        ToolCall { call_id: self.call_id, name: self.name, args: self.args, issued_at }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResultPayload {
    pub call_id: String,
    pub status: ToolStatus,
    pub result: String,
    #[serde(default)]
    pub step_count: u32,
    /// Distinct step kinds in first-seen order.
    #[serde(default)]
    pub step_kinds: Vec<StepKind>,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnCompletePayload {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Setup(SetupPayload),
    AudioIn(AudioPayload),
    FrameIn(FramePayload),
    AudioOut(AudioPayload),
    Transcript(TranscriptPayload),
    ToolCall(ToolCallPayload),
    ToolResult(ToolResultPayload),
    TurnComplete(TurnCompletePayload),
    Error(ErrorPayload),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Setup(_) => MessageKind::Setup,
            Body::AudioIn(_) => MessageKind::AudioIn,
            Body::FrameIn(_) => MessageKind::FrameIn,
            Body::AudioOut(_) => MessageKind::AudioOut,
            Body::Transcript(_) => MessageKind::Transcript,
            Body::ToolCall(_) => MessageKind::ToolCall,
            Body::ToolResult(_) => MessageKind::ToolResult,
            Body::TurnComplete(_) => MessageKind::TurnComplete,
            Body::Error(_) => MessageKind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveMessage {
    pub seq: u64,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    seq: u64,
    kind: String,
    payload: Value,
}

impl LiveMessage {
    pub fn new(seq: u64, body: Body) -> Self {
        Self { seq, body }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn encode(&self) -> String {
        let payload = match &self.body {
            Body::Setup(p) => serde_json::to_value(p),
            Body::AudioIn(p) | Body::AudioOut(p) => serde_json::to_value(p),
            Body::FrameIn(p) => serde_json::to_value(p),
            Body::Transcript(p) => serde_json::to_value(p),
            Body::ToolCall(p) => serde_json::to_value(p),
            Body::ToolResult(p) => serde_json::to_value(p),
            Body::TurnComplete(p) => serde_json::to_value(p),
            Body::Error(p) => serde_json::to_value(p),
        }
        .expect("payload types always serialize");
        let frame = Frame { seq: self.seq, kind: self.kind().as_str().to_string(), payload };
        serde_json::to_string(&frame).expect("frame always serializes")
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        let frame: Frame =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let Some(kind) = MessageKind::parse(&frame.kind) else {
            return Err(ProtocolError::UnknownKind { kind: frame.kind, seq: frame.seq });
        };
        fn p<T: for<'de> Deserialize<'de>>(kind: MessageKind, v: Value) -> Result<T, ProtocolError> {
            serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(format!("{kind} payload: {e}")))
        }
        let v = frame.payload;
        let body = match kind {
            MessageKind::Setup => Body::Setup(p(kind, v)?),
            MessageKind::AudioIn => Body::AudioIn(p(kind, v)?),
            MessageKind::FrameIn => Body::FrameIn(p(kind, v)?),
            MessageKind::AudioOut => Body::AudioOut(p(kind, v)?),
            MessageKind::Transcript => Body::Transcript(p(kind, v)?),
            MessageKind::ToolCall => Body::ToolCall(p(kind, v)?),
            MessageKind::ToolResult => Body::ToolResult(p(kind, v)?),
            MessageKind::TurnComplete => Body::TurnComplete(p(kind, v)?),
            MessageKind::Error => Body::Error(p(kind, v)?),
        };
        Ok(Self { seq: frame.seq, body })
    }
}
