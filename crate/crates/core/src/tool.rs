//! Types that cross the model/gateway boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Name of the single tool the default registry declares.
pub const EXECUTE_TOOL: &str = "execute";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDeclaration {
    pub name: String,
    pub description: String,
    pub parameters: BTreeMap<String, ParamType>,
}

impl ToolDeclaration {
    /// The `execute(task)` tool that hands work to the skill gateway.
    pub fn execute() -> Self {
        Self {
            name: EXECUTE_TOOL.into(),
            description: "Hand a real-world task (messages, search, memory, notes, calendar, \
                          shopping, files, devices) to the personal agent gateway."
                .into(),
            parameters: BTreeMap::from([("task".to_string(), ParamType::String)]),
        }
    }

    pub fn default_registry() -> Vec<Self> {
        vec![Self::execute()]
    }

    pub fn valid_name(name: &str) -> bool {
        !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub name: String,
    pub args: Map<String, Value>,
    /// Epoch milliseconds when the call was observed.
    pub issued_at: u64,
}

impl ToolCall {
    pub fn execute(call_id: impl Into<String>, task: impl Into<String>, issued_at: u64) -> Self {
        let mut args = Map::new();
        args.insert("task".into(), Value::String(task.into()));
        Self { call_id: call_id.into(), name: EXECUTE_TOOL.into(), args, issued_at }
    }

    /// The `task` argument of an `execute` call.
    pub fn task(&self) -> Option<&str> {
        self.args.get("task").and_then(Value::as_str)
    }

    pub fn validate(&self, declared: &[ToolDeclaration]) -> Result<(), String> {
        let Some(decl) = declared.iter().find(|d| d.name == self.name) else {
            return Err(format!("undeclared tool `{}`", self.name));
        };
        if self.name == EXECUTE_TOOL {
            if self.args.len() != 1 {
                return Err("execute takes exactly one argument, `task`".into());
            }
            match self.task() {
                Some(t) if !t.trim().is_empty() => {}
                _ => return Err("execute requires a non-empty string `task`".into()),
            }
            return Ok(());
        }
        for (k, v) in &self.args {
            let ok = match decl.parameters.get(k) {
                Some(ParamType::String) => v.is_string(),
                Some(ParamType::Number) => v.is_number(),
                Some(ParamType::Boolean) => v.is_boolean(),
                None => false,
            };
            if !ok {
                return Err(format!("argument `{k}` does not match the declaration of `{}`", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
    Timeout,
}

impl ToolStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::Error => "error",
            ToolStatus::Timeout => "timeout",
        }
    }
}

/// Step categories an executor can record. Analytics groups on these directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Shell,
    Browser,
    FileIo,
    WebSearch,
    Memory,
    Message,
}

impl StepKind {
    pub const ALL: [StepKind; 6] = [
        StepKind::Shell,
        StepKind::Browser,
        StepKind::FileIo,
        StepKind::WebSearch,
        StepKind::Memory,
        StepKind::Message,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Shell => "shell",
            StepKind::Browser => "browser",
            StepKind::FileIo => "file_io",
            StepKind::WebSearch => "web_search",
            StepKind::Memory => "memory",
            StepKind::Message => "message",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_kind: StepKind,
    pub detail: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub status: ToolStatus,
    pub summary: String,
    #[serde(default)]
    pub steps: Vec<StepRecord>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ToolResult {
    pub fn error(call_id: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            call_id: call_id.into(),
            status: ToolStatus::Error,
            summary: summary.into(),
            steps: Vec::new(),
            latency_ms: 0,
        }
    }
}
