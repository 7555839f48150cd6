//! Interaction logging and deployment statistics.

mod fixture;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{check_targets, generate_fixture, write_fixture, FixtureTargets};
pub use report::{
    compute_stats, render_report, CategoryShares, DepthShares, LatencyMedians, ReportFormat, StatsReport, TimeOfDay,
    TimeOfDayShares,
};

use crate::gateway::SkillName;
use crate::tool::{StepKind, StepRecord};

pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("{path}: {detail}")]
    Storage { path: PathBuf, detail: String },
    #[error("unknown report format `{0}` (expected json or table)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Communicate,
    Retrieve,
    Save,
    Recall,
    Shop,
    Control,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Communicate, Category::Retrieve, Category::Save, Category::Recall, Category::Shop, Category::Control];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Communicate => "communicate",
            Category::Retrieve => "retrieve",
            Category::Save => "save",
            Category::Recall => "recall",
            Category::Shop => "shop",
            Category::Control => "control",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallLog {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub id: String,
    pub session_id: String,
    /// Who was wearing the device.
    pub participant: String,
    pub started_at: u64,
    pub first_response_at: Option<u64>,
    pub completed_at: Option<u64>,
    /// Local time offset from UTC, for time-of-day and day bucketing.
    #[serde(default)]
    pub tz_offset_min: i32,
    pub utterance: String,
    pub used_camera: bool,
    pub tool_calls: Vec<ToolCallLog>,
    pub category: Category,
    pub data_sources: BTreeSet<String>,
    pub responded: bool,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let bad = |m: &str| Err(AnalyticsError::Invalid(format!("{}: {m}", self.id)));
        if self.utterance.trim().is_empty() {
            return bad("empty utterance");
        }
        if let Some(f) = self.first_response_at {
            if f < self.started_at {
                return bad("first_response_at before started_at");
            }
        }
        if let Some(c) = self.completed_at {
            if c < self.started_at || self.first_response_at.is_some_and(|f| c < f) {
                return bad("completed_at before an earlier timestamp");
            }
        }
        if self.responded && self.first_response_at.is_none() {
            return bad("responded without first_response_at");
        }
        Ok(())
    }

    /// Total tool-execution steps.
    pub fn chain_depth(&self) -> usize {
        self.tool_calls.iter().map(|c| c.steps.len()).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.tool_calls.iter().flat_map(|c| c.steps.iter())
    }

    pub fn used_browser(&self) -> bool {
        self.steps().any(|s| s.step_kind == StepKind::Browser)
    }

    pub fn latency_ms(&self) -> Option<u64> {
        if !self.responded {
            return None;
        }
        self.first_response_at.map(|f| f - self.started_at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub participant: String,
    pub started_at: u64,
    pub duration_ms: u64,
    /// Interaction ids in order.
    pub interactions: Vec<String>,
}

impl SessionRecord {
    /// Duration must cover every member interaction.
    pub fn validate(&self, members: &[&InteractionRecord]) -> Result<(), AnalyticsError> {
        let end = self.started_at + self.duration_ms;
        for r in members {
            let last = r.completed_at.or(r.first_response_at).unwrap_or(r.started_at);
            if r.started_at < self.started_at || last > end {
                return Err(AnalyticsError::Invalid(format!(
                    "session {} does not cover interaction {}",
                    self.session_id, r.id
                )));
            }
        }
        Ok(())
    }
}

/// Data source each skill touches.
pub fn data_source(skill: SkillName) -> &'static str {
    match skill {
        SkillName::EmailDraft => "email",
        SkillName::Calendar => "calendar",
        SkillName::Cart | SkillName::WebLookup => "web",
        SkillName::Memory => "memory",
        SkillName::Notes | SkillName::Files => "files",
        SkillName::Device => "device",
    }
}

fn re(p: &str) -> Regex {
    Regex::new(&format!("(?i){p}")).expect("static pattern")
}

static RULES: LazyLock<[(Category, Regex); 5]> = LazyLock::new(|| {
    [
        (Category::Communicate, re(r"\b(message|messages|e-?mails?|slack|reply|text|texts|archive|inbox|send|dm)\b")),
        (Category::Save, re(r"\b(save|remember|note|notes|write down|jot|bookmark)\b")),
        (
            Category::Recall,
            re(r"\b(did i|yesterday|last (week|night|time|month)|earlier|before|what was|where was|who was)\b"),
        ),
        (Category::Shop, re(r"\b(cart|buy|price|prices|reviews?|order|amazon|shopping|purchase|cost)\b")),
        (
            Category::Control,
            re(r"\b(turn on|turn off|switch|lights?|lamp|device|files?|folder|upload|download|open|lock|unlock|thermostat|fan)\b"),
        ),
    ]
});

fn cascade(text: &str) -> Option<Category> {
    RULES.iter().find(|(_, r)| r.is_match(text)).map(|(c, _)| *c)
}

/// Rule cascade over the utterance; the tool tasks break ties when the
/// utterance alone says nothing. Retrieve is the fallback.
pub fn categorize(utterance: &str, tool_calls: &[ToolCallLog]) -> Category {
    cascade(utterance)
        .or_else(|| tool_calls.iter().filter_map(|c| c.task.as_deref()).find_map(cascade))
        .unwrap_or(Category::Retrieve)
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), AnalyticsError> {
    let line = serde_json::to_string(value).expect("record serializes") + "\n";
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| AnalyticsError::Storage { path: path.to_path_buf(), detail: e.to_string() })
}

/// Append one validated record to `interactions.jsonl` in `dir`.
pub fn log_interaction(dir: &Path, record: &InteractionRecord) -> Result<(), AnalyticsError> {
    record.validate()?;
    append_line(&dir.join(INTERACTIONS_FILE), record)
}

pub fn log_session(dir: &Path, record: &SessionRecord) -> Result<(), AnalyticsError> {
    append_line(&dir.join(SESSIONS_FILE), record)
}

/// Parsed log directory. Unparseable or invalid lines are counted, not fatal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedLog {
    pub interactions: Vec<InteractionRecord>,
    pub sessions: Vec<SessionRecord>,
    pub malformed: usize,
}

pub fn load_log(dir: &Path) -> Result<LoadedLog, AnalyticsError> {
    let read = |name: &str| -> Result<String, AnalyticsError> {
        let path = dir.join(name);
        match std::fs::read_to_string(&path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && name == SESSIONS_FILE => Ok(String::new()),
            Err(e) => Err(AnalyticsError::Storage { path, detail: e.to_string() }),
        }
    };
    let mut out = LoadedLog::default();
    for line in read(INTERACTIONS_FILE)?.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<InteractionRecord>(line) {
            Ok(r) if r.validate().is_ok() => out.interactions.push(r),
            _ => out.malformed += 1,
        }
    }
    for line in read(SESSIONS_FILE)?.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<SessionRecord>(line) {
            Ok(s) => out.sessions.push(s),
            Err(_) => out.malformed += 1,
        }
    }
    Ok(out)
}
