//! Per-connection state of the mock model, independent of any socket.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::policy::{classify_turn, Decision, TurnPolicy};
use super::voice::{synthesize, ToneDecoder};
use crate::protocol::{
    AudioPayload, Body, ErrorPayload, LiveMessage, MessageKind, Role, ToolCallPayload, ToolResultPayload,
    TranscriptPayload, TurnCompletePayload, INPUT_AUDIO_RATE, OUTPUT_AUDIO_RATE,
};
use crate::tool::{ToolStatus, EXECUTE_TOOL};

/// Spoken output is split into chunks of this length.
pub const OUT_CHUNK_MS: usize = 240;
const SPOKEN_RESULT_CHARS: usize = 160;

/// A canned server reply for one expected utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    pub utterance: String,
    pub messages: Vec<ScriptedMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMessage {
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
}

impl ScriptedMessage {
    fn to_body(&self) -> Result<Body, String> {
        let frame = serde_json::json!({"seq": 0, "kind": self.kind, "payload": self.payload});
        let msg = LiveMessage::decode(&frame.to_string()).map_err(|e| e.to_string())?;
        match msg.kind() {
            MessageKind::AudioOut | MessageKind::Transcript | MessageKind::ToolCall | MessageKind::TurnComplete
            | MessageKind::Error => Ok(msg.body),
            k => Err(format!("{k} is not a server kind")),
        }
    }
}

/// Load a JSONL turn script.
pub fn load_script(text: &str) -> Result<Vec<ScriptedTurn>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let turn: ScriptedTurn = serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))?;
            for m in &turn.messages {
                m.to_body().map_err(|e| format!("line {}: {e}", i + 1))?;
            }
            Ok(turn)
        })
        .collect()
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug)]
pub struct ModelEngine {
    policy: Arc<TurnPolicy>,
    script: VecDeque<ScriptedTurn>,
    rng: ChaCha8Rng,
    seq: u64,
    last_in: Option<u64>,
    setup_done: bool,
    decoder: ToneDecoder,
    frames_seen: usize,
    pending_call: Option<String>,
    queued: VecDeque<String>,
}

impl ModelEngine {
    pub fn new(policy: Arc<TurnPolicy>, script: Vec<ScriptedTurn>, seed: u64) -> Self {
        Self {
            policy,
            script: script.into(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            last_in: None,
            setup_done: false,
            decoder: ToneDecoder::new(INPUT_AUDIO_RATE),
            frames_seen: 0,
            pending_call: None,
            queued: VecDeque::new(),
        }
    }

    pub fn pending_call(&self) -> Option<&str> {
        self.pending_call.as_deref()
    }

    fn emit(&mut self, out: &mut Vec<LiveMessage>, body: Body) {
        out.push(LiveMessage::new(self.seq, body));
        self.seq += 1;
    }

    fn error(&mut self, out: &mut Vec<LiveMessage>, code: &str, message: String) {
        self.emit(out, Body::Error(ErrorPayload { code: code.into(), message }));
    }

    fn transcript(&mut self, out: &mut Vec<LiveMessage>, role: Role, text: &str, is_final: bool) {
        self.emit(out, Body::Transcript(TranscriptPayload { role, text: text.into(), is_final }));
    }

    fn speak(&mut self, out: &mut Vec<LiveMessage>, text: &str) {
        let pcm = synthesize(text).pcm;
        let bytes_per_chunk = OUTPUT_AUDIO_RATE as usize * OUT_CHUNK_MS / 1000 * 2;
        for c in pcm.chunks(bytes_per_chunk) {
            self.emit(out, Body::AudioOut(AudioPayload { data: c.to_vec(), sample_rate: OUTPUT_AUDIO_RATE }));
        }
    }

    fn new_call_id(&mut self) -> String {
        let mut b = [0u8; 16];
        self.rng.fill_bytes(&mut b);
        b.iter().map(|x| format!("{x:02x}")).collect()
    }

    pub fn on_frame(&mut self, text: &str) -> Vec<LiveMessage> {
        match LiveMessage::decode(text) {
            Ok(m) => self.on_message(m),
            Err(e) => {
                let mut out = Vec::new();
                self.error(&mut out, "malformed", e.to_string());
                out
            }
        }
    }

    pub fn on_message(&mut self, msg: LiveMessage) -> Vec<LiveMessage> {
        let mut out = Vec::new();
        if self.last_in.is_some_and(|l| msg.seq <= l) || (self.last_in.is_none() && msg.seq != 0) {
            self.error(&mut out, "sequence", format!("client seq {} out of order", msg.seq));
            return out;
        }
        self.last_in = Some(msg.seq);
        if !self.setup_done && msg.kind() != MessageKind::Setup {
            self.error(&mut out, "setup_required", format!("{} before setup", msg.kind()));
            return out;
        }
        match msg.body {
            Body::Setup(s) => {
                if self.setup_done {
                    self.error(&mut out, "protocol", "setup already received".into());
                } else if !s.tools.iter().any(|t| t.name == EXECUTE_TOOL) {
                    self.error(&mut out, "setup", "no `execute` tool declared".into());
                } else {
                    self.setup_done = true;
                    self.emit(&mut out, Body::TurnComplete(TurnCompletePayload {}));
                }
            }
            Body::AudioIn(a) => {
                if a.sample_rate != INPUT_AUDIO_RATE {
                    self.error(&mut out, "protocol", format!("audio_in at {} Hz", a.sample_rate));
                } else {
                    for heard in self.decoder.push(&a.samples()) {
                        self.transcript(&mut out, Role::User, &heard, true);
                        self.user_turn(&mut out, heard);
                    }
                }
            }
            Body::FrameIn(_) => self.frames_seen += 1,
            Body::Transcript(t) if t.role == Role::User => {
                if t.is_final {
                    self.user_turn(&mut out, t.text);
                }
            }
            Body::ToolResult(r) => self.on_tool_result(&mut out, r),
            other => self.error(&mut out, "protocol", format!("{} is a server-to-client kind", other.kind())),
        }
        out
    }

    fn user_turn(&mut self, out: &mut Vec<LiveMessage>, text: String) {
        if text.trim().is_empty() {
            return;
        }
        if self.pending_call.is_some() {
            self.queued.push_back(text);
            return;
        }
        self.run_turn(out, &text);
    }

    fn run_turn(&mut self, out: &mut Vec<LiveMessage>, text: &str) {
        if let Some(turn) = self.script.pop_front_if(|t| norm(&t.utterance) == norm(text)) {
            return self.run_scripted(out, turn);
        }
        match classify_turn(text, self.frames_seen, &self.policy) {
            Decision::Respond { text } => {
                let words: Vec<&str> = text.split_whitespace().collect();
                let partial = words[..words.len().div_ceil(2)].join(" ");
                self.transcript(out, Role::Assistant, &partial, false);
                self.transcript(out, Role::Assistant, &text, true);
                self.speak(out, &text);
                self.end_turn(out);
            }
            Decision::Act { task, ack } => {
                self.transcript(out, Role::Assistant, &ack, true);
                self.speak(out, &ack);
                let call_id = self.new_call_id();
                let mut args = Map::new();
                args.insert("task".into(), Value::String(task));
                self.pending_call = Some(call_id.clone());
                self.emit(out, Body::ToolCall(ToolCallPayload { call_id, name: EXECUTE_TOOL.into(), args }));
            }
        }
    }

    fn run_scripted(&mut self, out: &mut Vec<LiveMessage>, turn: ScriptedTurn) {
        let mut closed = false;
        for m in &turn.messages {
            let body = m.to_body().expect("validated at load");
            match &body {
                Body::ToolCall(c) => self.pending_call = Some(c.call_id.clone()),
                Body::TurnComplete(_) => closed = true,
                _ => {}
            }
            self.emit(out, body);
            if self.pending_call.is_some() {
                // Anything after the call waits for its result.
                return;
            }
        }
        if !closed {
            self.end_turn(out);
        }
    }

    fn end_turn(&mut self, out: &mut Vec<LiveMessage>) {
        self.emit(out, Body::TurnComplete(TurnCompletePayload {}));
    }

    fn on_tool_result(&mut self, out: &mut Vec<LiveMessage>, r: ToolResultPayload) {
        if self.pending_call.as_deref() != Some(r.call_id.as_str()) {
            self.error(out, "unknown_call", format!("no tool call `{}` is open", r.call_id));
            return;
        }
        self.pending_call = None;
        let text = match r.status {
            ToolStatus::Ok => format!("Done. {}", spoken(&r.result)),
            ToolStatus::Error => format!("Sorry, that didn't work. {}", spoken(&r.result)),
            ToolStatus::Timeout => "Sorry, that's taking too long, so I stopped waiting.".to_string(),
        };
        let text = text.trim().to_string();
        self.transcript(out, Role::Assistant, &text, true);
        self.speak(out, &text);
        self.end_turn(out);
        while self.pending_call.is_none() {
            let Some(next) = self.queued.pop_front() else { break };
            self.run_turn(out, &next);
        }
    }
}

/// First sentence of a result, capped for speech. A period only ends a
/// sentence when whitespace or the end follows, so "4.5" stays whole.
fn spoken(result: &str) -> String {
    let end = result
        .char_indices()
        .find(|&(i, c)| {
            c == '\n' || (matches!(c, '.' | '!' | '?') && result[i + 1..].chars().next().is_none_or(char::is_whitespace))
        })
        .map_or(result.len(), |(i, c)| i + c.len_utf8());
    let first = result[..end].trim();
    if first.chars().count() <= SPOKEN_RESULT_CHARS {
        first.to_string()
    } else {
        let cut: String = first.chars().take(SPOKEN_RESULT_CHARS).collect();
        format!("{}...", cut.trim_end())
    }
}
