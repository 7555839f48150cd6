//! Skill gateway over HTTP: auth, validation, step accounting, side effects.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agentloop_core::gateway::{self, Gateway, GatewayConfig, GatewayServer};
use agentloop_core::router::ExecuteResponse;
use agentloop_core::tool::{StepKind, ToolStatus};
use serde_json::{json, Value};
use tempfile::TempDir;

const TOKEN: &str = "gw-test";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/gateway")
}

async fn start() -> (GatewayServer, TempDir) {
    let state = tempfile::tempdir().unwrap();
    let gw = Gateway::open(GatewayConfig {
        state_dir: state.path().to_path_buf(),
        fixtures_dir: Some(fixtures()),
        token: TOKEN.into(),
        allow_net: false,
    })
    .unwrap();
    (gateway::serve("127.0.0.1:0", gw).await.unwrap(), state)
}

async fn post_raw(server: &GatewayServer, token: &str, body: String) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{}/execute", server.url()))
        .bearer_auth(token)
        .header("content-type", "application/json")
        .body(body)
        .send()
        .await
        .unwrap();
    let code = resp.status().as_u16();
    (code, resp.json().await.unwrap_or(Value::Null))
}

async fn exec(server: &GatewayServer, call_id: &str, task: &str) -> ExecuteResponse {
    let (code, v) = post_raw(server, TOKEN, json!({"call_id": call_id, "task": task}).to_string()).await;
    assert_eq!(code, 200, "{task}: {v}");
    serde_json::from_value(v).unwrap()
}

/// State files and their bytes. The step log is an audit trail, not state.
fn state_snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "steps.jsonl") {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[tokio::test]
async fn bad_token_and_bad_bodies() {
    let (server, state) = start().await;
    let before = state_snapshot(state.path());
    let add = json!({"call_id": "a", "task": "add eggs to my shopping list"}).to_string();

    let (code, v) = post_raw(&server, "nope", add.clone()).await;
    assert_eq!(code, 401);
    assert_eq!(v["error"], "unauthorized");
    let (code, _) = post_raw(&server, TOKEN, "{not json".into()).await;
    assert_eq!(code, 422);
    let (code, _) = post_raw(&server, TOKEN, json!({"call_id": "a"}).to_string()).await;
    assert_eq!(code, 422);
    let (code, v) = post_raw(&server, TOKEN, json!({"call_id": "a", "task": "   "}).to_string()).await;
    assert_eq!(code, 422);
    assert!(v["error"].as_str().unwrap().contains("non-empty"));
    let (code, _) = post_raw(&server, TOKEN, json!({"call_id": "", "task": "hi"}).to_string()).await;
    assert_eq!(code, 422);

    assert_eq!(state_snapshot(state.path()), before);
    assert!(!state.path().join("steps.jsonl").exists());
    server.shutdown();
}

#[tokio::test]
async fn steps_are_reported_and_logged_once_each() {
    let (server, _state) = start().await;
    let tasks = [
        "add eggs to my shopping list",
        "turn off the light",
        "save this hotel info: room 204",
        "take a note: call the plumber",
        "email Sam that dinner is at 7",
        "schedule lab meeting Friday 3pm",
        "what is the price of the usb-c charger",
        "create a file called todo.txt with milk and bread",
        "turn on the toaster",
    ];
    for (i, task) in tasks.iter().enumerate() {
        let id = format!("s{i}");
        let r = exec(&server, &id, task).await;
        assert!(!r.steps.is_empty(), "{task}");
        assert_eq!(server.gateway().logged_steps(&id), r.steps, "{task}");
        assert!(r.steps.iter().all(|s| s.duration_ms > 0));
    }
    let unknown = exec(&server, "u", "turn on the toaster").await;
    assert_eq!(unknown.status, ToolStatus::Error);
    assert!(unknown.artifacts.is_empty());
    server.shutdown();
}

#[tokio::test]
async fn reads_leave_state_untouched() {
    let (server, state) = start().await;
    exec(&server, "seed", "remember my parking spot is level 3").await;
    let before = state_snapshot(state.path());
    for (i, task) in [
        "what is the price of the usb-c charger",
        "recall from memory: where did I park",
        "list my files",
        "what is the weather in Boston",
    ]
    .iter()
    .enumerate()
    {
        let a = exec(&server, &format!("r{i}a"), task).await;
        let b = exec(&server, &format!("r{i}b"), task).await;
        assert_eq!(a.summary, b.summary, "{task}");
        assert!(a.artifacts.is_empty(), "{task}");
        assert_eq!(state_snapshot(state.path()), before, "{task}");
    }
    let recall = exec(&server, "r", "recall from memory: where did I park").await;
    assert!(recall.summary.contains("level 3"), "{}", recall.summary);
    server.shutdown();
}

#[tokio::test]
async fn file_writes_stay_in_the_sandbox() {
    let (server, state) = start().await;
    let ok = exec(&server, "f1", "create a file called todo.txt with milk and bread").await;
    assert_eq!(ok.status, ToolStatus::Ok);
    assert_eq!(std::fs::read_to_string(state.path().join("files/todo.txt")).unwrap(), "milk and bread");

    for (i, name) in ["../escape.txt", "/tmp/escape.txt", "a/../../escape.txt"].iter().enumerate() {
        let r = exec(&server, &format!("f{}", i + 2), &format!("create a file called {name} with nope")).await;
        assert_eq!(r.status, ToolStatus::Error, "{name}");
        assert!(r.summary.contains("sandbox"), "{}", r.summary);
    }
    assert!(!state.path().join("escape.txt").exists());
    server.shutdown();
}

#[tokio::test]
async fn rating_gate_decides_the_purchase() {
    let (server, state) = start().await;
    let products = server.gateway().fixtures().products.clone();
    for (i, p) in products.iter().enumerate() {
        let item = p.title.to_lowercase();
        let task = format!("check the rating of {item} and if it exceeds 4.5 add it to my cart");
        let r = exec(&server, &format!("p{i}"), &task).await;
        assert_eq!(r.status, ToolStatus::Ok, "{task}: {}", r.summary);
        let cart: Vec<Value> = std::fs::read_to_string(state.path().join("cart.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        let in_cart = cart.iter().any(|c| c["title"] == json!(p.title));
        assert_eq!(in_cart, p.rating > 4.5, "{} rated {}", p.title, p.rating);
        assert!(r.steps.iter().any(|s| s.step_kind == StepKind::Browser));
    }
    server.shutdown();
}

#[tokio::test]
async fn device_toggle_round_trips() {
    let (server, state) = start().await;
    let on = |dir: &Path| -> bool {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("devices.json")).unwrap()).unwrap();
        v["light"]["on"].as_bool().unwrap()
    };
    assert!(on(state.path()));
    exec(&server, "d1", "turn off the light").await;
    assert!(!on(state.path()));
    exec(&server, "d2", "turn the light on").await;
    assert!(on(state.path()));
    let color = exec(&server, "d3", "set the light to blue").await;
    assert_eq!(color.status, ToolStatus::Ok);
    server.shutdown();
}

#[tokio::test]
async fn receipt_note_carries_store_and_total() {
    let (server, state) = start().await;
    let r = exec(&server, "n1", "take a note of this corner market receipt").await;
    assert_eq!(r.status, ToolStatus::Ok, "{}", r.summary);
    let notes = std::fs::read_to_string(state.path().join("notes.jsonl")).unwrap();
    let note: Value = serde_json::from_str(notes.lines().next().unwrap()).unwrap();
    assert_eq!(note["store"], "Corner Market");
    assert_eq!(note["total"], "13.50");
    assert!(r.artifacts.contains(&"notes.jsonl#1".to_string()));
    server.shutdown();
}

#[tokio::test]
async fn concurrent_adds_do_not_lose_updates() {
    let (server, state) = start().await;
    let url = server.url();
    let handles: Vec<_> = (0..20)
        .map(|i| {
            let url = url.clone();
            tokio::spawn(async move {
                reqwest::Client::new()
                    .post(format!("{url}/execute"))
                    .bearer_auth(TOKEN)
                    .json(&json!({"call_id": format!("c{i}"), "task": "add eggs to my shopping list"}))
                    .send()
                    .await
                    .unwrap()
                    .status()
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap().as_u16(), 200);
    }
    let cart: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(state.path().join("cart.json")).unwrap()).unwrap();
    assert_eq!(cart.len(), 1);
    assert_eq!(cart[0]["qty"], 20);
    server.shutdown();
}

#[tokio::test]
async fn state_endpoint_requires_the_token() {
    let (server, _state) = start().await;
    exec(&server, "a", "add eggs to my shopping list").await;
    let client = reqwest::Client::new();
    let denied = client.get(format!("{}/state/cart", server.url())).send().await.unwrap();
    assert_eq!(denied.status().as_u16(), 401);
    let cart: Value = client.get(format!("{}/state/cart", server.url())).bearer_auth(TOKEN).send().await.unwrap().json().await.unwrap();
    assert_eq!(cart[0]["name"], "eggs");
    let missing = client.get(format!("{}/state/nope", server.url())).bearer_auth(TOKEN).send().await.unwrap();
    assert_eq!(missing.status().as_u16(), 404);
    server.shutdown();
}
