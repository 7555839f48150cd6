//! Skill gateway: the execution side of `execute`.
//!
//! Tasks are routed by [`parse_task`] to one of a fixed set of skills. Each
//! skill runs a fixed step plan against stores under a state directory and
//! canned fixtures (product pages, receipts, devices), recording one
//! [`StepRecord`] per step.

mod http;
mod parse;
mod skills;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{router as http_router, serve, GatewayServer};
pub use parse::{parse_task, ParsedTask, SkillName};
pub use skills::{parse_receipt, Product, Receipt};

use crate::memory::MemoryStore;
use crate::router::RouteContext;
use crate::tool::{StepRecord, ToolStatus};

pub const DEFAULT_PORT: u16 = 18789;

/// Files under the state directory, by store name.
pub const STORES: [(&str, &str); 7] = [
    ("notes", "notes.jsonl"),
    ("calendar", "calendar.json"),
    ("cart", "cart.json"),
    ("devices", "devices.json"),
    ("drafts", "drafts.jsonl"),
    ("memory", "memory.jsonl"),
    ("steps", "steps.jsonl"),
];
pub const FILES_DIR: &str = "files";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("fixture {path}: {detail}")]
    Fixture { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub state_dir: PathBuf,
    pub fixtures_dir: Option<PathBuf>,
    pub token: String,
    pub allow_net: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ToolStatus,
    pub summary: String,
    pub steps: Vec<StepRecord>,
    /// Store records or sandbox paths this call created or changed.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StepLogLine {
    call_id: String,
    #[serde(flatten)]
    step: StepRecord,
}

/// Loaded fixtures.
#[derive(Debug, Clone, Default)]
pub struct Fixtures {
    pub products: Vec<Product>,
    /// (file stem, text), sorted by stem.
    pub receipts: Vec<(String, String)>,
    pub devices: serde_json::Map<String, serde_json::Value>,
}

impl Fixtures {
    pub fn load(dir: &Path) -> Result<Self, GatewayError> {
        let fx = |path: &Path, detail: String| GatewayError::Fixture { path: path.to_path_buf(), detail };
        let read_json = |path: &Path| -> Result<Option<serde_json::Value>, GatewayError> {
            match std::fs::read_to_string(path) {
                Ok(t) => serde_json::from_str(&t).map(Some).map_err(|e| fx(path, e.to_string())),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(fx(path, e.to_string())),
            }
        };
        let web = dir.join("web.json");
        let products = match read_json(&web)? {
            Some(v) => serde_json::from_value(v).map_err(|e| fx(&web, e.to_string()))?,
            None => Vec::new(),
        };
        let dev = dir.join("devices.json");
        let devices = match read_json(&dev)? {
            Some(serde_json::Value::Object(m)) => m,
            Some(_) => return Err(fx(&dev, "expected an object of devices".into())),
            None => Default::default(),
        };
        let mut receipts = Vec::new();
        let rdir = dir.join("receipts");
        if let Ok(rd) = std::fs::read_dir(&rdir) {
            for e in rd.flatten() {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "txt") {
                    let text = std::fs::read_to_string(&p).map_err(|e| fx(&p, e.to_string()))?;
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    receipts.push((stem, text));
                }
            }
        }
        receipts.sort();
        Ok(Self { products, receipts, devices })
    }
}

pub struct Gateway {
    cfg: GatewayConfig,
    fixtures: Fixtures,
    locks: HashMap<&'static str, Mutex<()>>,
    memory: Mutex<MemoryStore>,
    net: reqwest::Client,
}

impl Gateway {
    pub fn open(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        let io = |path: &Path, e: std::io::Error| GatewayError::Io { path: path.to_path_buf(), detail: e.to_string() };
        std::fs::create_dir_all(cfg.state_dir.join(FILES_DIR)).map_err(|e| io(&cfg.state_dir, e))?;
        let fixtures = match &cfg.fixtures_dir {
            Some(d) => Fixtures::load(d)?,
            None => Fixtures::default(),
        };
        let devices = cfg.state_dir.join("devices.json");
        if !devices.exists() {
            let text = serde_json::to_string_pretty(&fixtures.devices).expect("map serializes");
            std::fs::write(&devices, text).map_err(|e| io(&devices, e))?;
        }
        let mem_path = cfg.state_dir.join("memory.jsonl");
        let memory = MemoryStore::open(&mem_path)
            .map_err(|e| GatewayError::Io { path: mem_path.clone(), detail: e.to_string() })?;
        let locks = STORES.iter().map(|(name, _)| (*name, Mutex::new(()))).chain([(FILES_DIR, Mutex::new(()))]).collect();
        Ok(Self { cfg, fixtures, locks, memory: Mutex::new(memory), net: reqwest::Client::new() })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn fixtures(&self) -> &Fixtures {
        &self.fixtures
    }

    pub fn state_dir(&self) -> &Path {
        &self.cfg.state_dir
    }

    pub fn store_path(&self, store: &str) -> Option<PathBuf> {
        STORES.iter().find(|(n, _)| *n == store).map(|(_, f)| self.cfg.state_dir.join(f))
    }

    fn lock(&self, store: &str) -> std::sync::MutexGuard<'_, ()> {
        self.locks[store].lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Current contents of a store as JSON. JSONL stores become arrays.
    pub fn dump(&self, store: &str) -> Option<serde_json::Value> {
        let path = self.store_path(store)?;
        let _g = self.lock(store);
        let text = std::fs::read_to_string(&path).unwrap_or_default();
        if path.extension().is_some_and(|x| x == "jsonl") {
            Some(serde_json::Value::Array(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()))
        } else if text.trim().is_empty() {
            Some(serde_json::Value::Null)
        } else {
            serde_json::from_str(&text).ok()
        }
    }

    /// Run one task. `Err` only when the task is empty.
    pub async fn execute(
        &self,
        call_id: &str,
        task: &str,
        context: Option<&RouteContext>,
    ) -> Result<ExecutionResult, String> {
        let parsed = parse_task(task)?;
        tracing::info!(call_id, skill = %parsed.skill, "executing task");
        let result = skills::run(self, &parsed, context).await;
        self.log_steps(call_id, &result.steps);
        Ok(result)
    }

    fn log_steps(&self, call_id: &str, steps: &[StepRecord]) {
        if steps.is_empty() {
            return;
        }
        let path = self.cfg.state_dir.join("steps.jsonl");
        let mut buf = String::new();
        for s in steps {
            let line = StepLogLine { call_id: call_id.to_string(), step: s.clone() };
            buf.push_str(&serde_json::to_string(&line).expect("step serializes"));
            buf.push('\n');
        }
        let _g = self.lock("steps");
        let written = OpenOptions::new().create(true).append(true).open(&path).and_then(|mut f| f.write_all(buf.as_bytes()));
        if let Err(e) = written {
            tracing::error!(call_id, path = %path.display(), error = %e, "step log write failed");
        }
    }

    /// Step log lines recorded for `call_id`.
    pub fn logged_steps(&self, call_id: &str) -> Vec<StepRecord> {
        let text = std::fs::read_to_string(self.cfg.state_dir.join("steps.jsonl")).unwrap_or_default();
        text.lines()
            .filter_map(|l| serde_json::from_str::<StepLogLine>(l).ok())
            .filter(|l| l.call_id == call_id)
            .map(|l| l.step)
            .collect()
    }
}
