//! Whole-loop runs against the mock model and a real gateway, plus reconnect
//! handling against a deliberately flaky server.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentloop_core::agent::{run_session, AgentConfig, AgentInput, RunSummary};
use agentloop_core::gateway::{self, Gateway, GatewayConfig, GatewayServer};
use agentloop_core::media::{read_frame_dir, read_wav};
use agentloop_core::model_sim::{ModelEngine, ModelServer, ModelServerConfig, TurnPolicy};
use agentloop_core::protocol::{
    replay_capture, Body, CaptureLog, Direction, Effect, LiveClient, LiveMessage, Phase, Role, SessionConfig,
    SetupPayload, ToolCallPayload, TranscriptPayload, TurnCompletePayload,
};
use agentloop_core::router::RouterConfig;
use agentloop_core::tool::{ToolResult, ToolStatus};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;

const TOKEN: &str = "loop-test";

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Rig {
    model: ModelServer,
    gateway: GatewayServer,
    state: TempDir,
}

impl Rig {
    async fn start(seed: u64) -> Self {
        let state = tempfile::tempdir().unwrap();
        let gw = Gateway::open(GatewayConfig {
            state_dir: state.path().to_path_buf(),
            fixtures_dir: Some(repo().join("fixtures/gateway")),
            token: TOKEN.into(),
            allow_net: false,
        })
        .unwrap();
        let gateway = gateway::serve("127.0.0.1:0", gw).await.unwrap();
        let policy = TurnPolicy::load(&repo().join("fixtures/model/policy.json")).unwrap();
        let cfg = ModelServerConfig { policy: Arc::new(policy), script: Vec::new(), seed };
        let model = ModelServer::bind("127.0.0.1:0", cfg).await.unwrap();
        Self { model, gateway, state }
    }

    fn config(&self) -> AgentConfig {
        let session = SessionConfig { endpoint: self.model.url(), ..SessionConfig::default() };
        let router = RouterConfig { gateway_url: self.gateway.url(), bearer_token: TOKEN.into(), ..RouterConfig::default() };
        let mut cfg = AgentConfig::new(session, router);
        cfg.idle_timeout_ms = 300;
        cfg
    }

    fn store(&self, file: &str) -> Value {
        std::fs::read_to_string(self.state.path().join(file))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or(Value::Null)
    }
}

fn voice_input() -> AgentInput {
    AgentInput {
        audio: Some(read_wav(&repo().join("fixtures/media/add_eggs.wav")).unwrap()),
        frames: read_frame_dir(&repo().join("fixtures/media/frames"), 24).unwrap(),
        ..AgentInput::default()
    }
}

/// Index of the first incoming frame matching `pred`.
fn first_in(log: &CaptureLog, pred: impl Fn(&Body) -> bool) -> Option<usize> {
    log.lines.iter().position(|l| {
        l.dir == Direction::In && l.frame.as_deref().and_then(|f| LiveMessage::decode(f).ok()).is_some_and(|m| pred(&m.body))
    })
}

fn assistant_final(b: &Body) -> bool {
    matches!(b, Body::Transcript(TranscriptPayload { role: Role::Assistant, is_final: true, .. }))
}

#[tokio::test]
async fn voice_command_completes_the_loop() {
    let rig = Rig::start(7).await;
    let started = Instant::now();
    let summary = run_session(rig.config(), voice_input()).await.unwrap();
    let events: Vec<&str> = summary.timeline.iter().map(|e| e.event.as_str()).collect();

    let pos = |name: &str| events.iter().position(|e| *e == name).unwrap_or_else(|| panic!("no {name} in {events:?}"));
    let user = pos("user");
    let ack = pos("assistant");
    let call = pos("tool_call");
    let result = pos("tool_result");
    let confirm = events.iter().rposition(|e| *e == "assistant").unwrap();
    assert!(user < ack && ack < call && call < result && result < confirm, "{events:?}");
    assert!(summary.timeline[user].detail.contains("add eggs to my shopping list"));
    assert!(summary.timeline[confirm].detail.contains("eggs"));

    assert_eq!(summary.tool_results.len(), 1);
    assert_eq!(summary.tool_results[0].status, ToolStatus::Ok);
    assert_eq!(rig.store("cart.json")[0]["name"], "eggs");
    // The gateway logged its steps before answering, so the mutation preceded the result.
    assert!(!rig.gateway.gateway().logged_steps(&summary.tool_results[0].call_id).is_empty());

    // Completion time excludes the idle wait that ends the session.
    let done_ms = summary.timeline.iter().find(|e| e.event == "turn_complete" && e.at_ms > summary.timeline[result].at_ms).unwrap().at_ms;
    assert!(done_ms < 2_000, "loop took {done_ms} ms");
    assert!(started.elapsed() < Duration::from_secs(5));

    let log = &summary.capture;
    let ack_at = first_in(log, assistant_final).unwrap();
    let call_at = first_in(log, |b| matches!(b, Body::ToolCall(_))).unwrap();
    assert!(ack_at < call_at, "acknowledgment must precede the tool call");
    let report = replay_capture(log, &SessionConfig::default());
    assert!(report.ok(), "{:?}", report.violations);

    let i = &summary.interactions[0];
    assert!(i.used_camera);
    assert_eq!(i.chain_depth(), 3, "search, open, add");
    assert!(i.responded);
    rig.model.shutdown();
    rig.gateway.shutdown();
}

#[tokio::test]
async fn audio_only_camera_request_is_declined_without_a_call() {
    let rig = Rig::start(1).await;
    let mut cfg = rig.config();
    cfg.mode = agentloop_core::media::MediaMode::AudioOnly;
    let input = AgentInput { texts: vec!["add this to my cart".into()], ..voice_input() };
    let summary = run_session(cfg, input).await.unwrap();
    assert!(summary.capture.outgoing().iter().all(|m| !matches!(m.body, Body::FrameIn(_))));
    let last = summary.transcript.last().unwrap();
    assert!(last.contains("can't see"), "{last}");
    assert_eq!(summary.tool_results.len(), 1, "only the spoken request acts");
    rig.model.shutdown();
    rig.gateway.shutdown();
}

fn turn_shape(s: &RunSummary) -> Vec<String> {
    let mut out: Vec<String> = s.transcript.clone();
    out.extend(s.tool_results.iter().map(|r| format!("{} {} {}", r.call_id, r.status.as_str(), r.summary)));
    out
}

#[tokio::test]
async fn same_seed_same_conversation() {
    let texts = vec!["turn off the light".to_string(), "what is the price of the trail mix".into(), "hello".into()];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let rig = Rig::start(42).await;
        let input = AgentInput { texts: texts.clone(), ..AgentInput::default() };
        runs.push(turn_shape(&run_session(rig.config(), input).await.unwrap()));
        rig.model.shutdown();
        rig.gateway.shutdown();
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].len() >= 5, "{:?}", runs[0]);
}

#[test]
fn engine_output_is_a_function_of_input_and_seed() {
    let policy = Arc::new(TurnPolicy::load(&repo().join("fixtures/model/policy.json")).unwrap());
    let setup = LiveMessage::new(
        0,
        Body::Setup(SetupPayload {
            model_id: "m".into(),
            system_prompt: "p".into(),
            generation_params: Default::default(),
            tools: agentloop_core::tool::ToolDeclaration::default_registry(),
        }),
    );
    let user = |seq, text: &str| {
        LiveMessage::new(seq, Body::Transcript(TranscriptPayload { role: Role::User, text: text.into(), is_final: true }))
    };
    let drive = |seed| {
        let mut e = ModelEngine::new(Arc::clone(&policy), Vec::new(), seed);
        let mut out = Vec::new();
        out.extend(e.on_frame(&setup.encode()));
        out.extend(e.on_frame(&user(1, "turn off the lamp").encode()));
        out.into_iter().map(|m| m.encode()).collect::<Vec<_>>()
    };
    assert_eq!(drive(3), drive(3));
    assert_ne!(drive(3), drive(4), "call ids follow the seed");
}

/// Scripted server: on the first connection it acknowledges setup, issues a
/// tool call and hangs up; on later connections it only acknowledges.
async fn flaky_server() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}", listener.local_addr().unwrap());
    tokio::spawn(async move {
        for n in 0.. {
            let (tcp, _) = listener.accept().await.unwrap();
            let mut ws = tokio_tungstenite::accept_async(tcp).await.unwrap();
            let _setup = ws.next().await;
            let ack = LiveMessage::new(0, Body::TurnComplete(TurnCompletePayload {}));
            ws.send(Message::text(ack.encode())).await.unwrap();
            if n == 0 {
                let call = ToolCallPayload {
                    call_id: "c0ffee".into(),
                    name: "execute".into(),
                    args: serde_json::json!({"task": "add eggs to my list"}).as_object().unwrap().clone(),
                };
                ws.send(Message::text(LiveMessage::new(1, Body::ToolCall(call)).encode())).await.unwrap();
                let _ = ws.close(None).await;
            } else {
                tokio::spawn(async move { while ws.next().await.is_some() {} });
            }
        }
    });
    url
}

#[tokio::test]
async fn reconnect_abandons_open_calls_and_replays_cleanly() {
    let url = flaky_server().await;
    let (client, mut effects) = LiveClient::connect(SessionConfig { endpoint: url, ..SessionConfig::default() }).await.unwrap();
    let mut saw_dispatch = false;
    loop {
        match tokio::time::timeout(Duration::from_secs(5), effects.recv()).await.unwrap().unwrap() {
            Effect::Dispatch(call) => {
                assert_eq!(call.call_id, "c0ffee");
                saw_dispatch = true;
            }
            Effect::Disconnected => break,
            _ => {}
        }
    }
    assert!(saw_dispatch);
    let dropped = client.reconnect().await.unwrap();
    assert_eq!(dropped, vec!["c0ffee".to_string()]);
    assert_eq!(client.phase(), Phase::Ready);

    let late = ToolResult { status: ToolStatus::Ok, ..ToolResult::error("c0ffee", "Added eggs") };
    assert!(client.submit_tool_result(&late).is_err(), "abandoned call cannot be answered");
    client.send_text("hello again").unwrap();
    client.close();

    let log = client.capture();
    assert!(log.lines.iter().any(|l| l.event.as_deref() == Some("reconnect")));
    let report = replay_capture(&log, &SessionConfig::default());
    assert!(report.ok(), "{:?}", report.violations);
    assert_eq!(report.final_phase, Phase::Closed);
    assert_eq!(client.stats().reconnects, 1);
}

#[tokio::test]
async fn interaction_log_round_trips_through_stats() {
    let rig = Rig::start(5).await;
    let logs = tempfile::tempdir().unwrap();
    let mut cfg = rig.config();
    cfg.log_dir = Some(logs.path().to_path_buf());
    cfg.participant = "p9".into();
    let input = AgentInput {
        texts: vec!["turn off the light".into(), "hello".into(), "remember my locker is 12".into()],
        ..AgentInput::default()
    };
    run_session(cfg, input).await.unwrap();
    let loaded = agentloop_core::analytics::load_log(logs.path()).unwrap();
    assert_eq!(loaded.interactions.len(), 3);
    assert_eq!(loaded.sessions.len(), 1);
    assert_eq!(loaded.malformed, 0);
    let depth: Vec<usize> = loaded.interactions.iter().map(|i| i.chain_depth()).collect();
    assert_eq!(depth[1], 0, "a greeting needs no tools");
    assert!(depth[0] > 0 && depth[2] > 0);
    assert!(loaded.interactions.iter().all(|i| i.participant == "p9"));
    let report = agentloop_core::analytics::compute_stats(&loaded.interactions, &loaded.sessions, 0);
    assert_eq!(report.interactions, 3);
    rig.model.shutdown();
    rig.gateway.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn runs_wait_for_answers_on_a_threaded_runtime() {
    let rig = Rig::start(11).await;
    let summary = run_session(rig.config(), voice_input()).await.unwrap();
    assert_eq!(summary.tool_results.len(), 1, "{:?}", summary.timeline);

    // The setup acknowledgment must not close the first typed turn.
    let input = AgentInput { texts: vec!["turn off the light".into(), "hello".into()], ..AgentInput::default() };
    let summary = run_session(rig.config(), input).await.unwrap();
    let said: Vec<&str> =
        summary.timeline.iter().filter(|e| e.event == "assistant").map(|e| e.detail.as_str()).collect();
    assert!(said.iter().any(|t| t.contains("light off")), "{said:?}");
    assert_eq!(summary.interactions.len(), 2);
    assert!(summary.interactions.iter().all(|i| i.responded));
    assert_eq!(rig.store("devices.json")["light"]["on"], false);
    rig.model.shutdown();
    rig.gateway.shutdown();
}
