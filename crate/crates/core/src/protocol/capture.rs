//! Frame logs of a session, for offline replay through [`SessionState`].
//!
//! One JSON object per line:
//! `{"dir":"out","frame":"<encoded LiveMessage>"}` for client frames,
//! `{"dir":"in","frame":"..."}` for server frames and
//! `{"dir":"ctl","event":"close"|"reconnect"|"fail"}` for lifecycle events.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use super::message::{Body, LiveMessage};
use super::session::{Phase, SessionState};
use crate::media::{AudioChunk, MediaItem, VideoFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
    Ctl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureLine {
    pub dir: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

impl CaptureLine {
    pub fn out(msg: &LiveMessage) -> Self {
        Self { dir: Direction::Out, frame: Some(msg.encode()), event: None }
    }

    pub fn incoming(frame: impl Into<String>) -> Self {
        Self { dir: Direction::In, frame: Some(frame.into()), event: None }
    }

    pub fn ctl(event: &str) -> Self {
        Self { dir: Direction::Ctl, frame: None, event: Some(event.into()) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureLog {
    pub lines: Vec<CaptureLine>,
}

impl CaptureLog {
    pub fn push(&mut self, line: CaptureLine) {
        self.lines.push(line);
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?;
        Ok(Self { lines })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_jsonl(&self) -> String {
        self.lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("capture line serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    /// Server-to-client messages in order, skipping undecodable frames.
    pub fn incoming(&self) -> Vec<LiveMessage> {
        self.decoded(Direction::In)
    }

    pub fn outgoing(&self) -> Vec<LiveMessage> {
        self.decoded(Direction::Out)
    }

    fn decoded(&self, dir: Direction) -> Vec<LiveMessage> {
        self.lines
            .iter()
            .filter(|l| l.dir == dir)
            .filter_map(|l| l.frame.as_deref())
            .filter_map(|f| LiveMessage::decode(f).ok())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub lines: usize,
    pub final_phase: Phase,
    /// Problems found; empty for a clean replay.
    pub violations: Vec<String>,
    pub surfaced: usize,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.final_phase.is_terminal()
    }
}

/// Drive a fresh session through a capture. Outbound frames are regenerated
/// from the recorded client action and must match the recorded seq and kind.
pub fn replay_capture(log: &CaptureLog, cfg: &SessionConfig) -> ReplayReport {
    let mut s = SessionState::new(cfg);
    let mut violations = Vec::new();
    let mut surfaced = 0;
    for (i, line) in log.lines.iter().enumerate() {
        let n = i + 1;
        match line.dir {
            Direction::Ctl => match line.event.as_deref() {
                Some("close") => {
                    s.close();
                }
                Some("fail") => {
                    s.fail();
                }
                Some("reconnect") => {
                    if let Err(e) = s.begin_reconnect() {
                        violations.push(format!("line {n}: {e}"));
                    }
                }
                other => violations.push(format!("line {n}: unknown control event {other:?}")),
            },
            Direction::In => {
                let frame = line.frame.as_deref().unwrap_or_default();
                surfaced += s
                    .handle_frame(frame)
                    .iter()
                    .filter(|e| matches!(e, super::session::Effect::Surface(_)))
                    .count();
            }
            Direction::Out => {
                let recorded = match line.frame.as_deref().map(LiveMessage::decode) {
                    Some(Ok(m)) => m,
                    Some(Err(e)) => {
                        violations.push(format!("line {n}: recorded outbound frame: {e}"));
                        continue;
                    }
                    None => {
                        violations.push(format!("line {n}: outbound line without frame"));
                        continue;
                    }
                };
                match regenerate(&mut s, cfg, &recorded) {
                    Ok(m) if m.seq == recorded.seq && m.kind() == recorded.kind() => {}
                    Ok(m) => violations.push(format!(
                        "line {n}: regenerated {}#{} but capture has {}#{}",
                        m.kind(),
                        m.seq,
                        recorded.kind(),
                        recorded.seq
                    )),
                    Err(e) => violations.push(format!("line {n}: {e}")),
                }
            }
        }
        if let Err(e) = s.check_invariants() {
            violations.push(format!("line {n}: invariant: {e}"));
        }
    }
    if !s.phase().is_terminal() {
        violations.push(format!("capture ends in non-terminal phase {:?}", s.phase()));
    }
    ReplayReport { lines: log.lines.len(), final_phase: s.phase(), violations, surfaced }
}

fn regenerate(s: &mut SessionState, cfg: &SessionConfig, m: &LiveMessage) -> Result<LiveMessage, String> {
    let r = match &m.body {
        Body::Setup(_) => s.setup_message(cfg),
        Body::AudioIn(a) => s.send_media(&MediaItem::Audio(AudioChunk { samples: a.samples(), seq: 0, capture_ts: 0 })),
        Body::FrameIn(f) => s.send_media(&MediaItem::Frame(VideoFrame {
            jpeg_bytes: f.data.clone(),
            capture_ts: f.capture_ts,
            width: 0,
            height: 0,
            quality: 0,
        })),
        Body::Transcript(t) => s.send_user_text(&t.text),
        Body::ToolResult(r) => s.submit_formatted(r.clone()),
        other => return Err(format!("{} is not a client kind", other.kind())),
    };
    r.map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::message::{ToolCallPayload, TurnCompletePayload};

    fn log_with(lines: Vec<CaptureLine>) -> CaptureLog {
        CaptureLog { lines }
    }

    fn setup(cfg: &SessionConfig) -> CaptureLine {
        CaptureLine::out(&LiveMessage::new(0, Body::Setup(cfg.setup_payload())))
    }

    fn ack() -> CaptureLine {
        CaptureLine::incoming(LiveMessage::new(0, Body::TurnComplete(TurnCompletePayload {})).encode())
    }

    #[test]
    fn clean_capture_replays() {
        let cfg = SessionConfig::default();
        let log = log_with(vec![setup(&cfg), ack(), CaptureLine::ctl("close")]);
        let text = log.to_jsonl();
        let back = CaptureLog::parse(&text).unwrap();
        assert_eq!(back, log);
        let r = replay_capture(&back, &cfg);
        assert!(r.ok(), "{r:?}");
        assert_eq!(r.final_phase, Phase::Closed);
    }

    #[test]
    fn non_terminal_and_seq_mismatch_are_reported() {
        let cfg = SessionConfig::default();
        let bad = CaptureLine::out(&LiveMessage::new(5, Body::Setup(cfg.setup_payload())));
        let r = replay_capture(&log_with(vec![bad]), &cfg);
        assert!(!r.ok());
        assert_eq!(r.violations.len(), 2);
    }

    #[test]
    fn unresolved_call_still_consistent() {
        let cfg = SessionConfig::default();
        let mut args = serde_json::Map::new();
        args.insert("task".into(), "x".into());
        let call = LiveMessage::new(1, Body::ToolCall(ToolCallPayload { call_id: "a".into(), name: "execute".into(), args }));
        let r = replay_capture(
            &log_with(vec![setup(&cfg), ack(), CaptureLine::incoming(call.encode()), CaptureLine::ctl("fail")]),
            &cfg,
        );
        assert!(r.ok(), "{r:?}");
        assert_eq!(r.final_phase, Phase::Failed);
    }
}
