//! Dispatches `execute` calls to the skill gateway over HTTP.
//!
//! Each routed call owns one entry in the [`InflightTable`]. The HTTP task and
//! the deadline timer race to remove it; only the winner holds the sender that
//! delivers the result, so a call resolves exactly once.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::protocol::ToolResultPayload;
use crate::tool::{StepKind, StepRecord, ToolCall, ToolDeclaration, ToolResult, ToolStatus};

pub const TOKEN_ENV: &str = "AGENTLOOP_TOKEN";
pub const MAX_SUMMARY_BYTES: usize = 8 * 1024;
const ELLIPSIS: &str = "…[truncated]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub gateway_url: String,
    pub bearer_token: String,
    pub timeout_ms: u64,
    pub max_inflight: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            gateway_url: "http://127.0.0.1:18789".into(),
            bearer_token: String::new(),
            timeout_ms: 120_000,
            max_inflight: 8,
        }
    }
}

impl RouterConfig {
    /// Replace the token with `AGENTLOOP_TOKEN` when set.
    pub fn with_env_token(mut self) -> Self {
        if let Ok(t) = std::env::var(TOKEN_ENV) {
            if !t.is_empty() {
                self.bearer_token = t;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if self.bearer_token.is_empty() {
            return Err(format!("bearer token is empty; set it in config or {TOKEN_ENV}"));
        }
        if self.max_inflight == 0 {
            return Err("max_inflight must be positive".into());
        }
        Ok(())
    }
}

/// Extra context sent along with a task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteContext {
    #[serde(default)]
    pub recent_transcript: Vec<String>,
    #[serde(default)]
    pub frame_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub call_id: String,
    pub task: String,
    #[serde(default)]
    pub context: Option<RouteContext>,
}

/// Body of a 200 reply from the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteResponse {
    pub call_id: String,
    pub status: ToolStatus,
    pub summary: String,
    #[serde(default)]
    pub steps: Vec<StepRecord>,
    #[serde(default)]
    pub artifacts: Vec<String>,
}

struct Entry {
    deadline: Instant,
    tx: oneshot::Sender<ToolResult>,
}

/// Calls awaiting a result. Removal is the only way to reach an entry's
/// sender, which is what makes delivery exactly-once.
pub struct InflightTable {
    entries: HashMap<String, Entry>,
    max: usize,
    inserts: u64,
    removals: u64,
}

impl InflightTable {
    pub fn new(max: usize) -> Self {
        Self { entries: HashMap::new(), max, inserts: 0, removals: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inserts(&self) -> u64 {
        self.inserts
    }

    pub fn removals(&self) -> u64 {
        self.removals
    }

    pub fn contains(&self, call_id: &str) -> bool {
        self.entries.contains_key(call_id)
    }

    pub fn deadline(&self, call_id: &str) -> Option<Instant> {
        self.entries.get(call_id).map(|e| e.deadline)
    }

    fn insert(&mut self, call_id: &str, deadline: Instant, tx: oneshot::Sender<ToolResult>) -> Result<(), oneshot::Sender<ToolResult>> {
        if self.entries.len() >= self.max || self.entries.contains_key(call_id) {
            return Err(tx);
        }
        self.entries.insert(call_id.to_string(), Entry { deadline, tx });
        self.inserts += 1;
        Ok(())
    }

    /// Deliver `result` if the call is still in flight. Returns false when
    /// someone else already resolved it.
    pub fn complete(&mut self, result: ToolResult) -> bool {
        match self.entries.remove(&result.call_id) {
            Some(e) => {
                self.removals += 1;
                let _ = e.tx.send(result);
                true
            }
            None => false,
        }
    }
}

/// Resolves to the call's single [`ToolResult`].
pub struct PendingResult {
    call_id: String,
    rx: oneshot::Receiver<ToolResult>,
}

impl PendingResult {
    fn ready(result: ToolResult) -> Self {
        let (tx, rx) = oneshot::channel();
        let call_id = result.call_id.clone();
        let _ = tx.send(result);
        Self { call_id, rx }
    }

    pub fn call_id(&self) -> &str {
        &self.call_id
    }

    pub async fn wait(self) -> ToolResult {
        let id = self.call_id;
        self.rx.await.unwrap_or_else(|_| ToolResult::error(id, "router dropped the call"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouterStats {
    pub routed: u64,
    pub saturated: u64,
    pub timeouts: u64,
    pub late_discarded: u64,
}

#[derive(Default)]
struct Counters {
    routed: AtomicU64,
    saturated: AtomicU64,
    timeouts: AtomicU64,
    late: AtomicU64,
}

#[derive(Clone)]
pub struct Router {
    cfg: Arc<RouterConfig>,
    tools: Arc<Vec<ToolDeclaration>>,
    table: Arc<Mutex<InflightTable>>,
    http: reqwest::Client,
    counters: Arc<Counters>,
}

impl Router {
    pub fn new(cfg: RouterConfig, tools: Vec<ToolDeclaration>) -> Self {
        let table = InflightTable::new(cfg.max_inflight);
        Self {
            cfg: Arc::new(cfg),
            tools: Arc::new(tools),
            table: Arc::new(Mutex::new(table)),
            http: reqwest::Client::new(),
            counters: Arc::default(),
        }
    }

    pub fn config(&self) -> &RouterConfig {
        &self.cfg
    }

    pub fn inflight(&self) -> usize {
        self.table.lock().expect("inflight lock").len()
    }

    /// (inserts, removals, current size) read under one lock.
    pub fn table_counts(&self) -> (u64, u64, usize) {
        let t = self.table.lock().expect("inflight lock");
        (t.inserts(), t.removals(), t.len())
    }

    pub fn stats(&self) -> RouterStats {
        RouterStats {
            routed: self.counters.routed.load(Ordering::Relaxed),
            saturated: self.counters.saturated.load(Ordering::Relaxed),
            timeouts: self.counters.timeouts.load(Ordering::Relaxed),
            late_discarded: self.counters.late.load(Ordering::Relaxed),
        }
    }

    /// Dispatch one call. Must be called inside a tokio runtime.
    pub fn route(&self, call: &ToolCall, context: Option<RouteContext>) -> PendingResult {
        if let Err(why) = call.validate(&self.tools) {
            return PendingResult::ready(ToolResult::error(&call.call_id, why));
        }
        let task = call.task().unwrap_or_default().to_string();
        let started = Instant::now();
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let (tx, rx) = oneshot::channel();
        {
            let mut t = self.table.lock().expect("inflight lock");
            if let Err(tx) = t.insert(&call.call_id, started + timeout, tx) {
                let why = if t.contains(&call.call_id) {
                    format!("call `{}` is already in flight", call.call_id)
                } else {
                    self.counters.saturated.fetch_add(1, Ordering::Relaxed);
                    format!("router saturated ({} calls in flight)", t.len())
                };
                let _ = tx.send(ToolResult::error(&call.call_id, why));
                return PendingResult { call_id: call.call_id.clone(), rx };
            }
        }
        self.counters.routed.fetch_add(1, Ordering::Relaxed);

        let timer = {
            let table = Arc::clone(&self.table);
            let counters = Arc::clone(&self.counters);
            let id = call.call_id.clone();
            let timeout_ms = self.cfg.timeout_ms;
            tokio::spawn(async move {
                tokio::time::sleep(timeout).await;
                let res = ToolResult {
                    call_id: id,
                    status: ToolStatus::Timeout,
                    summary: format!("no reply from the gateway before the {timeout_ms} ms deadline"),
                    steps: Vec::new(),
                    latency_ms: started.elapsed().as_millis() as u64,
                };
                if table.lock().expect("inflight lock").complete(res) {
                    counters.timeouts.fetch_add(1, Ordering::Relaxed);
                }
            })
        };

        let req = ExecuteRequest { call_id: call.call_id.clone(), task, context };
        let this = self.clone();
        tokio::spawn(async move {
            let mut res = this.post(&req).await;
            res.latency_ms = started.elapsed().as_millis() as u64;
            let delivered = this.table.lock().expect("inflight lock").complete(res);
            if delivered {
                timer.abort();
            } else {
                this.counters.late.fetch_add(1, Ordering::Relaxed);
                tracing::info!(call_id = %req.call_id, "late gateway reply discarded");
            }
        });

        PendingResult { call_id: call.call_id.clone(), rx }
    }

    async fn post(&self, req: &ExecuteRequest) -> ToolResult {
        let url = format!("{}/execute", self.cfg.gateway_url.trim_end_matches('/'));
        let resp = match self.http.post(&url).bearer_auth(&self.cfg.bearer_token).json(req).send().await {
            Ok(r) => r,
            Err(e) => return ToolResult::error(&req.call_id, format!("gateway unreachable: {e}")),
        };
        let status = resp.status();
        let body = resp.text().await.unwrap_or_default();
        match status.as_u16() {
            200 => match serde_json::from_str::<ExecuteResponse>(&body) {
                Ok(r) => ToolResult {
                    call_id: req.call_id.clone(),
                    status: r.status,
                    summary: r.summary,
                    steps: r.steps,
                    latency_ms: 0,
                },
                Err(e) => ToolResult::error(&req.call_id, format!("unreadable gateway reply: {e}")),
            },
            401 => ToolResult::error(&req.call_id, "gateway rejected the bearer token (401)"),
            code => ToolResult::error(&req.call_id, format!("gateway returned {code}: {}", body.trim())),
        }
    }
}

/// Distinct step kinds in first-seen order.
pub fn step_kinds(steps: &[StepRecord]) -> Vec<StepKind> {
    let mut out = Vec::new();
    for s in steps {
        if !out.contains(&s.step_kind) {
            out.push(s.step_kind);
        }
    }
    out
}

/// Wire form of a result: steps are summarized, long summaries truncated.
pub fn format_result(res: &ToolResult) -> ToolResultPayload {
    let mut summary = res.summary.clone();
    if res.status == ToolStatus::Timeout && !summary.contains("deadline") {
        summary = format!("deadline exceeded: {summary}");
    }
    let truncated = summary.len() > MAX_SUMMARY_BYTES;
    if truncated {
        let mut cut = MAX_SUMMARY_BYTES - ELLIPSIS.len();
        while !summary.is_char_boundary(cut) {
            cut -= 1;
        }
        summary.truncate(cut);
        summary.push_str(ELLIPSIS);
    }
    ToolResultPayload {
        call_id: res.call_id.clone(),
        status: res.status,
        result: summary,
        step_count: res.steps.len() as u32,
        step_kinds: step_kinds(&res.steps),
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(kind: StepKind) -> StepRecord {
        StepRecord { step_kind: kind, detail: String::new(), duration_ms: 1 }
    }

    #[test]
    fn ok_result_maps_fields() {
        let r = ToolResult {
            call_id: "c1".into(),
            status: ToolStatus::Ok,
            summary: "Added eggs".into(),
            steps: vec![step(StepKind::WebSearch), step(StepKind::Browser), step(StepKind::Browser)],
            latency_ms: 3,
        };
        let p = format_result(&r);
        assert_eq!(p.status, ToolStatus::Ok);
        assert_eq!(p.step_count, 3);
        assert_eq!(p.step_kinds, vec![StepKind::WebSearch, StepKind::Browser]);
        assert!(!p.truncated);
    }

    #[test]
    fn timeout_mentions_deadline() {
        let r = ToolResult { status: ToolStatus::Timeout, ..ToolResult::error("c", "nothing back") };
        let p = format_result(&r);
        assert_eq!(serde_json::to_value(p.status).unwrap(), "timeout");
        assert!(p.result.contains("deadline"));
    }

    #[test]
    fn long_summary_truncated() {
        for fill in ["x", "é"] {
            let r = ToolResult::error("c", fill.repeat(10_000));
            let p = format_result(&r);
            assert!(p.truncated);
            assert!(p.result.len() <= MAX_SUMMARY_BYTES);
            assert!(p.result.ends_with(ELLIPSIS));
        }
        let exact = ToolResult::error("c", "y".repeat(MAX_SUMMARY_BYTES));
        assert!(!format_result(&exact).truncated);
    }

    #[test]
    fn table_counts_and_capacity() {
        let mut t = InflightTable::new(2);
        let now = Instant::now();
        let mut rxs = Vec::new();
        for id in ["a", "b"] {
            let (tx, rx) = oneshot::channel();
            assert!(t.insert(id, now, tx).is_ok());
            rxs.push(rx);
        }
        let (tx, _rx) = oneshot::channel();
        assert!(t.insert("c", now, tx).is_err());
        assert!(t.complete(ToolResult::error("a", "x")));
        assert!(!t.complete(ToolResult::error("a", "again")));
        assert_eq!(t.inserts() - t.removals(), t.len() as u64);
    }

    #[test]
    fn env_token_overrides() {
        // Only this test touches the variable.
        std::env::set_var(TOKEN_ENV, "from-env");
        let cfg = RouterConfig { bearer_token: "file".into(), ..Default::default() }.with_env_token();
        std::env::remove_var(TOKEN_ENV);
        assert_eq!(cfg.bearer_token, "from-env");
    }
}
