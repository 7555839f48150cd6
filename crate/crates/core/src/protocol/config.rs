use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::message::{Scalar, SetupPayload};
use crate::tool::ToolDeclaration;

/// Instructions sent in the setup message.
///
/// The mock model enforces the mechanically checkable parts: acknowledge out
/// loud before every `execute` call, and route anything about the past through
/// `execute` instead of answering from context.
pub const DEFAULT_SYSTEM_PROMPT: &str = "\
You are the voice of a wearable assistant. You hear the wearer and see roughly one \
camera frame per second. Answer briefly and conversationally.
You hold no memory, files, inbox, calendar or accounts of your own. Your only tool is \
`execute`, which forwards a task to the wearer's personal agent. Use it for messaging, \
searching, shopping, notes, reminders, calendar changes, device control, and anything \
that concerns the past (yesterday, last week, earlier, something the wearer did or said \
before). Do not reconstruct past events from the conversation.
Always say a short acknowledgment out loud before calling `execute`; never call it \
silently. Write the task with every name, quantity, time and detail the agent needs.
Do not claim to have done something yourself; only `execute` acts in the world.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub model_id: String,
    pub system_prompt: String,
    pub generation_params: BTreeMap<String, Scalar>,
    pub tools: Vec<ToolDeclaration>,
    pub endpoint: String,
    pub reconnect_max_attempts: u32,
    pub reconnect_backoff_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            model_id: "mock-live-audio".into(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            generation_params: BTreeMap::from([("temperature".to_string(), Scalar::Float(0.0))]),
            tools: ToolDeclaration::default_registry(),
            endpoint: "ws://127.0.0.1:18788".into(),
            reconnect_max_attempts: 3,
            reconnect_backoff_ms: 100,
        }
    }
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        if self.endpoint.trim().is_empty() {
            return Err("endpoint must not be empty".into());
        }
        let mut seen = HashSet::new();
        for t in &self.tools {
            if !ToolDeclaration::valid_name(&t.name) {
                return Err(format!("tool name `{}` must match [a-z_]+", t.name));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(format!("tool `{}` declared twice", t.name));
            }
        }
        Ok(())
    }

    pub fn setup_payload(&self) -> SetupPayload {
        SetupPayload {
            model_id: self.model_id.clone(),
            system_prompt: self.system_prompt.clone(),
            generation_params: self.generation_params.clone(),
            tools: self.tools.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_single_execute_tool() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tools.len(), 1);
        assert_eq!(cfg.tools[0].name, "execute");
        assert_eq!(cfg.tools[0].parameters.keys().collect::<Vec<_>>(), vec!["task"]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SessionConfig { model_id: String::new(), ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg = SessionConfig::default();
        cfg.tools.push(ToolDeclaration::execute());
        assert!(cfg.validate().unwrap_err().contains("twice"));
        cfg = SessionConfig::default();
        cfg.tools[0].name = "Run".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: SessionConfig = serde_json::from_str(r#"{"endpoint":"ws://127.0.0.1:9"}"#).unwrap();
        assert_eq!(cfg.endpoint, "ws://127.0.0.1:9");
        assert_eq!(cfg.reconnect_max_attempts, 3);
    }
}
