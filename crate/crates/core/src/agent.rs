//! The see-and-act loop: media in, model effects out, tool calls routed to
//! the gateway and answered back into the session.

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::analytics::{self, categorize, InteractionRecord, SessionRecord, ToolCallLog};
use crate::epoch_ms;
use crate::gateway::parse_task;
use crate::media::{CapturedFrame, MediaError, MediaEvent, MediaItem, MediaMode, MediaPipeline, PipelineConfig, RawAudio};
use crate::protocol::{
    AudioPayload, CaptureLog, ClientError, Effect, LiveClient, PlaybackQueue, Role, SessionConfig, SessionStats,
};
use crate::router::{RouteContext, Router, RouterConfig};
use crate::tool::{ToolCall, ToolDeclaration, ToolResult};

/// Raw input is cut into pieces this long before entering the pipeline.
const FEED_PIECE_MS: u64 = 20;
/// Chunk RMS above which queued playback is cut off.
const BARGE_IN_RMS: f64 = 1_500.0;
const CONTEXT_TURNS: usize = 6;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
}

/// Whether media is fed at capture speed or as fast as the link allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pace {
    Realtime,
    #[default]
    Fast,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub session: SessionConfig,
    pub router: RouterConfig,
    pub pipeline: PipelineConfig,
    pub mode: MediaMode,
    pub pace: Pace,
    /// Quiet period after all input is sent before the session is closed.
    pub idle_timeout_ms: u64,
    pub participant: String,
    /// Interaction and session records are appended here when set.
    pub log_dir: Option<PathBuf>,
}

impl AgentConfig {
    pub fn new(session: SessionConfig, router: RouterConfig) -> Self {
        Self {
            session,
            router,
            pipeline: PipelineConfig::default(),
            mode: MediaMode::default(),
            pace: Pace::default(),
            idle_timeout_ms: 3_000,
            participant: "local".into(),
            log_dir: None,
        }
    }
}

/// Commands accepted from a control channel while the loop runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ControlCommand {
    /// Inject typed input as a user turn.
    Utterance { text: String },
    /// End the session.
    Stop,
}

#[derive(Debug, Default)]
pub struct AgentInput {
    pub audio: Option<RawAudio>,
    pub frames: Vec<CapturedFrame>,
    /// Typed turns, sent one at a time after the media once the loop is idle.
    pub texts: Vec<String>,
    /// When set, the loop keeps running after its input is exhausted until
    /// a `Stop` arrives or the sender is dropped.
    pub commands: Option<mpsc::UnboundedReceiver<ControlCommand>>,
    /// Every timeline event is mirrored here as it happens.
    pub events: Option<mpsc::UnboundedSender<TimelineEvent>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub at_ms: u64,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub timeline: Vec<TimelineEvent>,
    pub interactions: Vec<InteractionRecord>,
    pub session: SessionRecord,
    pub capture: CaptureLog,
    pub stats: SessionStats,
    pub transcript: Vec<String>,
    pub tool_results: Vec<ToolResult>,
    /// Assistant audio that reached the speaker, 24 kHz mono.
    pub playback: Vec<i16>,
    pub playback_dropped: usize,
}

struct Draft {
    id: String,
    utterance: String,
    started_at: u64,
    first_response_at: Option<u64>,
    used_camera: bool,
    tool_calls: Vec<ToolCallLog>,
    pending: BTreeSet<String>,
    sources: BTreeSet<String>,
}

struct Loop {
    cfg: AgentConfig,
    client: LiveClient,
    router: Router,
    session_id: String,
    started: Instant,
    started_epoch: u64,
    open: VecDeque<Draft>,
    done: Vec<InteractionRecord>,
    timeline: Vec<TimelineEvent>,
    tool_results: Vec<ToolResult>,
    frames_sent: Arc<AtomicU64>,
    last_frame_ts: Arc<AtomicU64>,
    playback: Arc<Mutex<PlaybackQueue>>,
    played: Vec<i16>,
    next_id: u64,
    events: Option<mpsc::UnboundedSender<TimelineEvent>>,
}

impl Loop {
    fn note(&mut self, event: &str, detail: impl Into<String>) {
        let detail = detail.into();
        tracing::debug!(event, %detail, "timeline");
        let ev = TimelineEvent { at_ms: self.started.elapsed().as_millis() as u64, event: event.into(), detail };
        if let Some(tx) = &self.events {
            let _ = tx.send(ev.clone());
        }
        self.timeline.push(ev);
    }

    fn open_interaction(&mut self, utterance: &str) {
        self.next_id += 1;
        let used_camera = self.cfg.mode == MediaMode::AudioAndVideo && self.frames_sent.load(Ordering::Relaxed) > 0;
        self.open.push_back(Draft {
            id: format!("{}-{:03}", self.session_id, self.next_id),
            utterance: utterance.to_string(),
            started_at: epoch_ms(),
            first_response_at: None,
            used_camera,
            tool_calls: Vec::new(),
            pending: BTreeSet::new(),
            sources: BTreeSet::new(),
        });
        self.note("user", utterance);
    }

    fn responded(&mut self) {
        if let Some(d) = self.open.front_mut() {
            d.first_response_at.get_or_insert_with(epoch_ms);
        }
    }

    fn close_front(&mut self) {
        let Some(d) = self.open.pop_front() else { return };
        self.done.push(finish(d, &self.session_id, &self.cfg.participant, Some(epoch_ms())));
    }

    fn dispatch(&mut self, call: ToolCall, results: &mpsc::UnboundedSender<ToolResult>) {
        let task = call.task().unwrap_or_default().to_string();
        self.note("tool_call", format!("{} {task}", call.call_id));
        if let Some(d) = self.open.front_mut() {
            d.pending.insert(call.call_id.clone());
            if let Ok(parsed) = parse_task(&task) {
                d.sources.insert(analytics::data_source(parsed.skill).to_string());
            }
            d.tool_calls.push(ToolCallLog { name: call.name.clone(), task: Some(task), steps: Vec::new() });
        }
        let frames = self.frames_sent.load(Ordering::Relaxed);
        let context = RouteContext {
            recent_transcript: self.client.transcript().recent(CONTEXT_TURNS),
            frame_refs: (frames > 0)
                .then(|| format!("frame@{}ms", self.last_frame_ts.load(Ordering::Relaxed)))
                .into_iter()
                .collect(),
        };
        let pending = self.router.route(&call, Some(context));
        let tx = results.clone();
        tokio::spawn(async move {
            let _ = tx.send(pending.wait().await);
        });
    }

    fn on_result(&mut self, result: ToolResult) {
        self.note("tool_result", format!("{} {} {}", result.call_id, result.status.as_str(), result.summary));
        for d in self.open.iter_mut() {
            if d.pending.remove(&result.call_id) {
                if let Some(log) = d.tool_calls.iter_mut().find(|c| c.steps.is_empty()) {
                    log.steps = result.steps.clone();
                }
            }
        }
        if let Err(e) = self.client.submit_tool_result(&result) {
            self.note("error", format!("could not submit {}: {e}", result.call_id));
        }
        self.tool_results.push(result);
    }

    fn on_playback(&mut self, audio: AudioPayload) {
        let mut q = self.playback.lock().expect("playback lock");
        q.enqueue(audio);
        if self.cfg.pace == Pace::Fast {
            for chunk in q.drain() {
                self.played.extend(chunk.samples());
            }
        }
    }

    /// Play one queued chunk; returns how long it lasts.
    fn play_next(&mut self) -> Option<Duration> {
        let chunk = self.playback.lock().expect("playback lock").pop_chunk()?;
        let d = Duration::from_micros(chunk.duration_us());
        self.played.extend(chunk.samples());
        Some(d)
    }

    fn idle(&self) -> bool {
        self.open.is_empty() && self.router.inflight() == 0
    }
}

fn finish(d: Draft, session_id: &str, participant: &str, completed_at: Option<u64>) -> InteractionRecord {
    let category = categorize(&d.utterance, &d.tool_calls);
    let responded = d.first_response_at.is_some();
    InteractionRecord {
        id: d.id,
        session_id: session_id.to_string(),
        participant: participant.to_string(),
        started_at: d.started_at,
        first_response_at: d.first_response_at,
        completed_at: if responded { completed_at } else { None },
        tz_offset_min: chrono::Local::now().offset().local_minus_utc() / 60,
        utterance: d.utterance,
        used_camera: d.used_camera,
        tool_calls: d.tool_calls,
        category,
        data_sources: d.sources,
        responded,
    }
}

/// Cut the input into a timestamp-ordered event stream.
fn media_events(input: &AgentInput) -> Vec<(u64, MediaEvent)> {
    let mut events: Vec<(u64, MediaEvent)> = Vec::new();
    if let Some(audio) = &input.audio {
        let per_piece = (audio.sample_rate as u64 * FEED_PIECE_MS / 1000).max(1) as usize * audio.channels as usize;
        for (i, piece) in audio.samples.chunks(per_piece).enumerate() {
            let raw = RawAudio { samples: piece.to_vec(), sample_rate: audio.sample_rate, channels: audio.channels };
            events.push((i as u64 * FEED_PIECE_MS, MediaEvent::Audio(raw)));
        }
    }
    events.extend(input.frames.iter().map(|f| (f.capture_ts, MediaEvent::Frame(f.clone()))));
    events.sort_by_key(|(ts, _)| *ts);
    events
}

struct Feeder {
    client: LiveClient,
    pipeline: MediaPipeline,
    pace: Pace,
    frames_sent: Arc<AtomicU64>,
    last_frame_ts: Arc<AtomicU64>,
    playback: Arc<Mutex<PlaybackQueue>>,
}

impl Feeder {
    fn send(&self, item: &MediaItem) -> Result<(), AgentError> {
        match item {
            MediaItem::Audio(chunk) => {
                self.playback.lock().expect("playback lock").on_user_audio(chunk.rms());
            }
            MediaItem::Frame(f) => {
                self.frames_sent.fetch_add(1, Ordering::Relaxed);
                self.last_frame_ts.store(f.capture_ts, Ordering::Relaxed);
            }
        }
        self.client.send_media(item)?;
        Ok(())
    }

    async fn run(mut self, events: Vec<(u64, MediaEvent)>) -> Result<(), AgentError> {
        let t0 = Instant::now();
        for (ts, event) in events {
            if self.pace == Pace::Realtime {
                tokio::time::sleep_until((t0 + Duration::from_millis(ts)).into()).await;
            }
            for item in self.pipeline.process(event)? {
                self.send(&item)?;
            }
            tokio::task::yield_now().await;
        }
        for item in self.pipeline.finish() {
            self.send(&item)?;
        }
        Ok(())
    }
}

async fn recv_command(rx: &mut Option<mpsc::UnboundedReceiver<ControlCommand>>) -> Option<ControlCommand> {
    match rx {
        Some(rx) => rx.recv().await,
        None => std::future::pending().await,
    }
}

/// Run one session end to end and return what happened.
pub async fn run_session(cfg: AgentConfig, input: AgentInput) -> Result<RunSummary, AgentError> {
    cfg.router.validate().map_err(AgentError::Config)?;
    let pipeline = MediaPipeline::new(cfg.pipeline.clone(), cfg.mode)?;
    let (client, mut effects) = LiveClient::connect(cfg.session.clone()).await?;
    let router = Router::new(cfg.router.clone(), ToolDeclaration::default_registry());
    let started_epoch = epoch_ms();
    let events = media_events(&input);
    let mut lp = Loop {
        session_id: format!("s{started_epoch}"),
        client: client.clone(),
        router,
        started: Instant::now(),
        started_epoch,
        open: VecDeque::new(),
        done: Vec::new(),
        timeline: Vec::new(),
        tool_results: Vec::new(),
        frames_sent: Arc::new(AtomicU64::new(0)),
        last_frame_ts: Arc::new(AtomicU64::new(0)),
        playback: Arc::new(Mutex::new(PlaybackQueue::new(BARGE_IN_RMS))),
        played: Vec::new(),
        next_id: 0,
        events: input.events,
        cfg,
    };
    lp.note("connected", lp.cfg.session.endpoint.clone());

    let feeder = Feeder {
        client: client.clone(),
        pipeline,
        pace: lp.cfg.pace,
        frames_sent: Arc::clone(&lp.frames_sent),
        last_frame_ts: Arc::clone(&lp.last_frame_ts),
        playback: Arc::clone(&lp.playback),
    };
    let mut feed = tokio::spawn(feeder.run(events));
    let mut feeding = true;
    let mut texts: VecDeque<String> = input.texts.into();
    let mut commands = input.commands;
    let (result_tx, mut results) = mpsc::unbounded_channel::<ToolResult>();
    let idle_timeout = Duration::from_millis(lp.cfg.idle_timeout_ms);
    let mut last_activity = Instant::now();
    let mut next_play = Instant::now();
    // The first turn_complete acknowledges setup; typed turns wait for it.
    let mut ready = false;

    loop {
        if ready && !feeding && lp.idle() {
            if let Some(text) = texts.pop_front() {
                match client.send_text(&text) {
                    Ok(_) => lp.open_interaction(&text),
                    Err(e) => lp.note("error", format!("could not send text: {e}")),
                }
                last_activity = Instant::now();
                continue;
            }
        }
        let playing = !lp.playback.lock().expect("playback lock").is_empty();
        tokio::select! {
            fed = &mut feed, if feeding => {
                feeding = false;
                last_activity = Instant::now();
                match fed {
                    Ok(Ok(())) => lp.note("media_done", ""),
                    Ok(Err(e)) => lp.note("error", format!("media feed stopped: {e}")),
                    Err(e) => lp.note("error", format!("media feed panicked: {e}")),
                }
            }
            Some(effect) = effects.recv() => {
                last_activity = Instant::now();
                match effect {
                    Effect::Transcript { role: Role::User, text, is_final: true } => lp.open_interaction(&text),
                    Effect::Transcript { role: Role::User, .. } => {}
                    Effect::Transcript { role: Role::Assistant, text, is_final } => {
                        lp.responded();
                        if is_final {
                            lp.note("assistant", text);
                        }
                    }
                    Effect::Playback(audio) => {
                        lp.responded();
                        lp.on_playback(audio);
                    }
                    Effect::Dispatch(call) => lp.dispatch(call, &result_tx),
                    Effect::TurnComplete => {
                        lp.note("turn_complete", "");
                        if !std::mem::replace(&mut ready, true) {
                            continue;
                        }
                        if lp.open.front().is_some_and(|d| d.pending.is_empty()) {
                            lp.close_front();
                        }
                    }
                    Effect::Surface(e) => lp.note("surface", format!("{}: {}", e.code, e.message)),
                    Effect::Disconnected => {
                        lp.note("disconnected", "");
                        match client.reconnect().await {
                            Ok(dropped) => lp.note("reconnected", format!("{} calls abandoned", dropped.len())),
                            Err(e) => {
                                lp.note("error", format!("reconnect failed: {e}"));
                                break;
                            }
                        }
                    }
                }
            }
            cmd = recv_command(&mut commands) => {
                last_activity = Instant::now();
                match cmd {
                    Some(ControlCommand::Utterance { text }) => texts.push_back(text),
                    Some(ControlCommand::Stop) => {
                        lp.note("stop", "");
                        break;
                    }
                    None => commands = None,
                }
            }
            Some(result) = results.recv() => {
                last_activity = Instant::now();
                lp.on_result(result);
            }
            _ = tokio::time::sleep_until(next_play.into()), if playing => {
                next_play = Instant::now() + lp.play_next().unwrap_or_default();
            }
            // The model may still be answering the last input, so only a quiet
            // period with no call in flight and nothing left to play ends the run.
            _ = tokio::time::sleep_until((last_activity + idle_timeout).into()),
                if !feeding && commands.is_none() && !playing && lp.router.inflight() == 0 => {
                lp.note("idle_timeout", format!("{} interactions still open", lp.open.len()));
                break;
            }
        }
    }

    feed.abort();
    client.close();
    lp.note("closed", "");
    let unfinished: Vec<Draft> = lp.open.drain(..).collect();
    for d in unfinished {
        lp.done.push(finish(d, &lp.session_id, &lp.cfg.participant, Some(epoch_ms())));
    }
    let duration_ms = epoch_ms().saturating_sub(lp.started_epoch);
    let session = SessionRecord {
        session_id: lp.session_id.clone(),
        participant: lp.cfg.participant.clone(),
        started_at: lp.started_epoch,
        duration_ms,
        interactions: lp.done.iter().map(|r| r.id.clone()).collect(),
    };
    if let Some(dir) = &lp.cfg.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| analytics::AnalyticsError::Storage {
            path: dir.clone(),
            detail: e.to_string(),
        })?;
        for r in &lp.done {
            analytics::log_interaction(dir, r)?;
        }
        analytics::log_session(dir, &session)?;
    }
    let dropped = lp.playback.lock().expect("playback lock").dropped();
    Ok(RunSummary {
        timeline: lp.timeline,
        interactions: lp.done,
        session,
        capture: client.capture(),
        stats: client.stats(),
        transcript: client.transcript().recent(usize::MAX),
        tool_results: lp.tool_results,
        playback: lp.played,
        playback_dropped: dropped,
    })
}
