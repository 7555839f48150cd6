//! Free-text task to skill routing. First matching rule wins.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillName {
    Notes,
    EmailDraft,
    Calendar,
    Cart,
    Device,
    Memory,
    WebLookup,
    Files,
}

impl SkillName {
    pub const ALL: [SkillName; 8] = [
        SkillName::Notes,
        SkillName::EmailDraft,
        SkillName::Calendar,
        SkillName::Cart,
        SkillName::Device,
        SkillName::Memory,
        SkillName::WebLookup,
        SkillName::Files,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillName::Notes => "notes",
            SkillName::EmailDraft => "email_draft",
            SkillName::Calendar => "calendar",
            SkillName::Cart => "cart",
            SkillName::Device => "device",
            SkillName::Memory => "memory",
            SkillName::WebLookup => "web_lookup",
            SkillName::Files => "files",
        }
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTask {
    pub skill: SkillName,
    pub args: BTreeMap<String, String>,
}

impl ParsedTask {
    fn new(skill: SkillName, args: &[(&str, String)]) -> Self {
        Self { skill, args: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }
}

fn re(p: &str) -> Regex {
    Regex::new(&format!("(?i){p}")).expect("static pattern")
}

static RECALL_PREFIX: LazyLock<Regex> = LazyLock::new(|| re(r"^\s*recall from memory:\s*"));
static MEMORY_SEARCH: LazyLock<Regex> = LazyLock::new(|| {
    re(r"\b(what|when|where|who|which|how)\b.*\bdid i\b|\bdid i\b|\byesterday\b|\blast week\b|\bearlier\b|\bdo you remember\b|\bremind me what\b")
});
static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| re(r"\b(e-?mail|mail|message|slack|reply|inbox|archive|text)\b"));
static EMAIL_TO: LazyLock<Regex> = LazyLock::new(|| re(r"\b(?:to|email|message|text)\s+([A-Z][a-zA-Z]+)"));
static CALENDAR: LazyLock<Regex> = LazyLock::new(|| re(r"\b(calendar|schedule|meeting|appointment|remind)\b"));
static WEEKDAY: LazyLock<Regex> =
    LazyLock::new(|| re(r"\b(monday|tuesday|wednesday|thursday|friday|saturday|sunday)\b"));
static CLOCK: LazyLock<Regex> = LazyLock::new(|| re(r"\b(\d{1,2})(?::(\d{2}))?\s*(am|pm)\b"));
static DEVICE: LazyLock<Regex> =
    LazyLock::new(|| re(r"\bturn (on|off)\b|\b(light|lamp|fan|heater|plug|switch)\b|\bcolou?r\b"));
static DEVICE_STATE: LazyLock<Regex> = LazyLock::new(|| {
    re(r"\bturn (on|off) (?:the |my )?([a-z ]+?)\s*[.!]?\s*$|\bturn (?:the |my )?([a-z ]+?) (on|off)\b")
});
static DEVICE_COLOR: LazyLock<Regex> = LazyLock::new(|| {
    re(r"\b(?:set|make|change|turn) (?:the |my )?([a-z ]+?) (?:to |colou?r to )?(red|orange|yellow|green|blue|purple|pink|white|warm white)\b")
});
static NOTES: LazyLock<Regex> = LazyLock::new(|| re(r"\b(note|notes|receipt|write down|jot)\b"));
static CART: LazyLock<Regex> =
    LazyLock::new(|| re(r"\b(cart|buy|order|purchase)\b|\badd\b.+\bto (?:my|the)\b.*\b(list|cart)\b"));
static CART_ADD: LazyLock<Regex> =
    LazyLock::new(|| re(r"\badd (?:an? |some |the )?(.+?) to (?:my|the)\b"));
static CART_VERB: LazyLock<Regex> =
    LazyLock::new(|| re(r"\b(?:buy|order|purchase) (?:an? |some |the )?(.+?)(?:\s+(?:on|from|if|and)\b|[.,]|$)"));
static CART_OF: LazyLock<Regex> = LazyLock::new(|| {
    re(r"\b(?:rating|score|reviews?|price)\s+(?:of|for)\s+(?:an? |the )?(.+?)(?:\s+(?:on|and|if)\b|[.,]|$)")
});
static MIN_RATING: LazyLock<Regex> = LazyLock::new(|| {
    re(r"\b(?:exceeds|above|over|greater than|more than|higher than|at least)\s+(\d+(?:\.\d+)?)")
});
static MEMORY_SAVE: LazyLock<Regex> = LazyLock::new(|| re(r"\b(save|remember|memorize|keep in mind)\b"));
static FILES: LazyLock<Regex> = LazyLock::new(|| re(r"\b(upload|file|files|folder|document)\b"));
static FILE_NAME: LazyLock<Regex> = LazyLock::new(|| re(r#"\b(?:file|document)\s+(?:called |named )?"?([^\s"]+)"?"#));
static FILE_CONTENT: LazyLock<Regex> = LazyLock::new(|| re(r"\b(?:with|containing|saying)\s+(.+)$"));

const PRONOUNS: [&str; 5] = ["it", "this", "that", "them", "these"];

fn clean(s: &str) -> String {
    s.trim().trim_matches(|c: char| c == '"' || c == '\'' || c.is_ascii_punctuation()).trim().to_string()
}

fn cart_item(task: &str) -> Option<String> {
    let add = CART_ADD.captures(task).or_else(|| CART_VERB.captures(task)).map(|c| clean(&c[1]));
    match add {
        Some(item) if !PRONOUNS.contains(&item.to_lowercase().as_str()) => Some(item),
        _ => CART_OF.captures(task).map(|c| clean(&c[1])),
    }
}

/// Map a task to a skill and its arguments.
pub fn parse_task(task: &str) -> Result<ParsedTask, String> {
    let task = task.trim();
    if task.is_empty() {
        return Err("task must not be empty".into());
    }
    use SkillName::*;
    if let Some(m) = RECALL_PREFIX.find(task) {
        return Ok(ParsedTask::new(Memory, &[("op", "search".into()), ("query", task[m.end()..].to_string())]));
    }
    if MEMORY_SEARCH.is_match(task) {
        return Ok(ParsedTask::new(Memory, &[("op", "search".into()), ("query", task.into())]));
    }
    if EMAIL.is_match(task) {
        let mut args = vec![("body", task.to_string())];
        if let Some(c) = EMAIL_TO.captures(task) {
            args.push(("to", c[1].to_string()));
        }
        return Ok(ParsedTask::new(EmailDraft, &args));
    }
    if CALENDAR.is_match(task) {
        let mut args = vec![("text", task.to_string())];
        if let Some(c) = WEEKDAY.captures(task) {
            args.push(("weekday", c[1].to_lowercase()));
        }
        if let Some(c) = CLOCK.captures(task) {
            let h: u32 = c[1].parse().unwrap_or(99);
            let m: u32 = c.get(2).map_or(0, |m| m.as_str().parse().unwrap_or(99));
            if (1..=12).contains(&h) && m < 60 {
                let h24 = match (h, c[3].to_lowercase().as_str()) {
                    (12, "am") => 0,
                    (12, _) => 12,
                    (h, "pm") => h + 12,
                    (h, _) => h,
                };
                args.push(("time", format!("{h24:02}:{m:02}")));
            }
        }
        let title = CLOCK.replace_all(&WEEKDAY.replace_all(task, ""), "").to_string();
        let title = re(r"\b(schedule|add|put|set up|a|an|on|at|for|my|to|calendar|the)\b")
            .replace_all(&title, " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        args.push(("title", if title.is_empty() { "event".into() } else { title }));
        return Ok(ParsedTask::new(Calendar, &args));
    }
    if DEVICE.is_match(task) {
        if let Some(c) = DEVICE_COLOR.captures(task) {
            return Ok(ParsedTask::new(Device, &[("target", clean(&c[1])), ("color", c[2].to_lowercase())]));
        }
        if let Some(c) = DEVICE_STATE.captures(task) {
            let (state, target) = match (c.get(1), c.get(2)) {
                (Some(s), Some(t)) => (s.as_str(), t.as_str()),
                _ => (&c[4], &c[3]),
            };
            return Ok(ParsedTask::new(Device, &[("target", clean(target)), ("state", state.to_lowercase())]));
        }
        return Ok(ParsedTask::new(Device, &[("text", task.into())]));
    }
    if NOTES.is_match(task) {
        let receipt = task.to_lowercase().contains("receipt");
        let mut args = vec![("text", task.to_string())];
        if receipt {
            args.push(("receipt", "true".into()));
        }
        return Ok(ParsedTask::new(Notes, &args));
    }
    if CART.is_match(task) {
        let mut args = vec![];
        if let Some(item) = cart_item(task) {
            args.push(("item", item));
        }
        if let Some(c) = MIN_RATING.captures(task) {
            args.push(("min_rating", c[1].to_string()));
        }
        return Ok(ParsedTask::new(Cart, &args));
    }
    if MEMORY_SAVE.is_match(task) {
        return Ok(ParsedTask::new(Memory, &[("op", "save".into()), ("text", task.into())]));
    }
    if FILES.is_match(task) {
        let mut args = vec![];
        if let Some(c) = FILE_NAME.captures(task) {
            args.push(("name", c[1].to_string()));
        }
        if let Some(c) = FILE_CONTENT.captures(task) {
            args.push(("content", c[1].trim().to_string()));
        }
        let op = if args.iter().any(|(k, _)| *k == "content") { "write" } else { "list" };
        args.push(("op", op.into()));
        return Ok(ParsedTask::new(Files, &args));
    }
    Ok(ParsedTask::new(WebLookup, &[("query", task.into())]))
}
