//! Router delivery under gateway delays that straddle the deadline.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentloop_core::gateway::{self, Gateway, GatewayConfig};
use agentloop_core::router::{ExecuteRequest, ExecuteResponse, Router, RouterConfig};
use agentloop_core::tool::{ToolCall, ToolDeclaration, ToolResult, ToolStatus};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Json;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOKEN: &str = "stub-token";

type Hits = Arc<Mutex<HashMap<String, u32>>>;

/// Sleeps for the number of milliseconds named in the task, then succeeds.
async fn stub_execute(State(hits): State<Hits>, headers: HeaderMap, Json(req): Json<ExecuteRequest>) -> Response {
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some(&format!("Bearer {TOKEN}")) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    *hits.lock().unwrap().entry(req.call_id.clone()).or_default() += 1;
    let ms: u64 = req.task.trim_start_matches("sleep ").parse().unwrap_or(0);
    tokio::time::sleep(Duration::from_millis(ms)).await;
    Json(ExecuteResponse {
        call_id: req.call_id,
        status: ToolStatus::Ok,
        summary: format!("slept {ms} ms"),
        steps: Vec::new(),
        artifacts: Vec::new(),
    })
    .into_response()
}

async fn stub_gateway() -> (String, Hits) {
    let hits: Hits = Arc::default();
    let app = axum::Router::new().route("/execute", post(stub_execute)).with_state(Arc::clone(&hits));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (url, hits)
}

fn router(url: &str, token: &str, timeout_ms: u64, max_inflight: usize) -> Router {
    let cfg = RouterConfig { gateway_url: url.into(), bearer_token: token.into(), timeout_ms, max_inflight };
    Router::new(cfg, ToolDeclaration::default_registry())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn one_result_per_call_under_randomized_delays() {
    const TRIALS: usize = 1000;
    const TIMEOUT: u64 = 60;
    const WAVE: usize = 25;
    // Near the deadline either outcome is legitimate; outside it the status is fixed.
    const MARGIN: u64 = 20;

    let (url, hits) = stub_gateway().await;
    let r = router(&url, TOKEN, TIMEOUT, WAVE);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut delays = BTreeMap::new();
    let mut results: HashMap<String, Vec<ToolResult>> = HashMap::new();

    for wave in 0..TRIALS / WAVE {
        let pending: Vec<_> = (0..WAVE)
            .map(|i| {
                let id = format!("{:04x}", wave * WAVE + i);
                let delay = rng.random_range(TIMEOUT / 2..=TIMEOUT * 3 / 2);
                delays.insert(id.clone(), delay);
                r.route(&ToolCall::execute(&id, format!("sleep {delay}"), 0), None)
            })
            .collect();
        for p in pending {
            let id = p.call_id().to_string();
            let res = p.wait().await;
            assert_eq!(res.call_id, id);
            results.entry(id).or_default().push(res);
        }
    }

    assert_eq!(results.len(), TRIALS, "every call resolved");
    assert!(results.values().all(|v| v.len() == 1), "no call resolved twice");
    let (mut ok, mut timeouts) = (0, 0);
    for (id, v) in &results {
        let d = delays[id];
        match v[0].status {
            ToolStatus::Ok => {
                ok += 1;
                assert!(d < TIMEOUT + MARGIN, "{id} slept {d} ms yet beat a {TIMEOUT} ms deadline");
            }
            ToolStatus::Timeout => {
                timeouts += 1;
                assert!(d > TIMEOUT.saturating_sub(MARGIN), "{id} slept {d} ms yet timed out");
            }
            ToolStatus::Error => panic!("{id}: unexpected error {}", v[0].summary),
        }
    }
    assert!(ok > 100 && timeouts > 100, "delays should straddle the deadline: {ok} ok, {timeouts} timeouts");

    // Late replies from timed-out calls land after their deadline and must be dropped.
    tokio::time::sleep(Duration::from_millis(TIMEOUT * 2)).await;
    let stats = r.stats();
    assert_eq!(stats.routed, TRIALS as u64);
    assert_eq!(stats.timeouts, timeouts);
    assert_eq!(stats.late_discarded, timeouts);
    assert_eq!(stats.saturated, 0);
    assert_eq!(r.table_counts(), (TRIALS as u64, TRIALS as u64, 0));
    let hits = hits.lock().unwrap();
    assert_eq!(hits.len(), TRIALS);
    assert!(hits.values().all(|&n| n == 1), "router never retries");
}

#[tokio::test]
async fn ninth_concurrent_call_is_refused() {
    let (url, hits) = stub_gateway().await;
    let r = router(&url, TOKEN, 5_000, 8);
    let pending: Vec<_> = (0..9).map(|i| r.route(&ToolCall::execute(format!("c{i}"), "sleep 150", 0), None)).collect();
    let mut statuses = Vec::new();
    for p in pending {
        statuses.push(p.wait().await);
    }
    assert!(statuses[..8].iter().all(|s| s.status == ToolStatus::Ok));
    assert_eq!(statuses[8].status, ToolStatus::Error);
    assert!(statuses[8].summary.contains("saturated"));
    assert_eq!(r.stats().saturated, 1);
    assert!(!hits.lock().unwrap().contains_key("c8"));

    // The slot frees once earlier calls finish.
    let again = r.route(&ToolCall::execute("c9", "sleep 1", 0), None).wait().await;
    assert_eq!(again.status, ToolStatus::Ok);
}

#[tokio::test]
async fn duplicate_and_undeclared_calls_are_rejected_locally() {
    let (url, hits) = stub_gateway().await;
    let r = router(&url, TOKEN, 5_000, 8);
    let first = r.route(&ToolCall::execute("dup", "sleep 100", 0), None);
    let second = r.route(&ToolCall::execute("dup", "sleep 1", 0), None).wait().await;
    assert_eq!(second.status, ToolStatus::Error);
    assert!(second.summary.contains("already in flight"));
    assert_eq!(first.wait().await.status, ToolStatus::Ok);

    let mut bogus = ToolCall::execute("x", "sleep 1", 0);
    bogus.name = "launch".into();
    let res = r.route(&bogus, None).wait().await;
    assert_eq!(res.status, ToolStatus::Error);
    assert_eq!(hits.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn unreachable_gateway_is_an_error_not_a_hang() {
    let r = router("http://127.0.0.1:9", TOKEN, 2_000, 8);
    let res = r.route(&ToolCall::execute("c", "add eggs to cart", 0), None).wait().await;
    assert_eq!(res.status, ToolStatus::Error);
    assert!(res.summary.contains("unreachable"));
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/gateway")
}

/// Every file under `dir` with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[tokio::test]
async fn wrong_token_mutates_nothing() {
    let state = tempfile::tempdir().unwrap();
    let gw = Gateway::open(GatewayConfig {
        state_dir: state.path().to_path_buf(),
        fixtures_dir: Some(fixtures()),
        token: "right".into(),
        allow_net: false,
    })
    .unwrap();
    let server = gateway::serve("127.0.0.1:0", gw).await.unwrap();
    let before = snapshot(state.path());

    let bad = router(&server.url(), "wrong", 5_000, 8);
    let tasks = [
        "add eggs to my shopping list",
        "turn off the light",
        "remember my parking spot is level 3",
        "save a note: buy stamps",
        "send an email to Sam saying hi",
    ];
    for (i, t) in tasks.iter().enumerate() {
        let res = bad.route(&ToolCall::execute(format!("w{i}"), *t, 0), None).wait().await;
        assert_eq!(res.status, ToolStatus::Error);
        assert!(res.summary.contains("401"), "{}", res.summary);
    }
    assert_eq!(snapshot(state.path()), before);

    let good = router(&server.url(), "right", 5_000, 8);
    let res = good.route(&ToolCall::execute("g", tasks[0], 0), None).wait().await;
    assert_eq!(res.status, ToolStatus::Ok, "{}", res.summary);
    assert_ne!(snapshot(state.path()), before);
    server.shutdown();
}
