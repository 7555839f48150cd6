use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

/// Words that always send a turn through `execute`: the model has no memory
/// of its own.
pub const PAST_REFERENCES: [&str; 5] = ["yesterday", "last week", "did i", "earlier", "before"];

const MEMORY_ACK: &str = "Let me check your memory for that.";
const MEMORY_TASK: &str = "recall from memory: {utterance}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Respond,
    Act,
}

/// One row of `policy.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    pub action: RuleAction,
    /// Reply for `respond` rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack_text: Option<String>,
    /// `{utterance}` is replaced with the user's words. Defaults to the
    /// utterance itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_template: Option<String>,
    /// Only act when a camera frame arrived during the turn.
    #[serde(default)]
    pub requires_frame: bool,
    /// Reply when `requires_frame` is set and no frame was seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_frame_text: Option<String>,
}

#[derive(Debug, Clone)]
struct Rule {
    spec: RuleSpec,
    re: Regex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Respond { text: String },
    Act { task: String, ack: String },
}

#[derive(Debug, Clone)]
pub struct TurnPolicy {
    rules: Vec<Rule>,
    default_text: String,
    past: Regex,
}

fn build(pattern: &str) -> Result<Regex, String> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|e| format!("pattern `{pattern}`: {e}"))
}

impl TurnPolicy {
    pub fn new(specs: Vec<RuleSpec>, default_text: impl Into<String>) -> Result<Self, String> {
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            match spec.action {
                RuleAction::Act if spec.ack_text.as_deref().is_none_or(|t| t.trim().is_empty()) => {
                    return Err(format!("act rule `{}` has no ack_text", spec.pattern));
                }
                RuleAction::Respond if spec.text.is_none() => {
                    return Err(format!("respond rule `{}` has no text", spec.pattern));
                }
                _ => {}
            }
            if spec.requires_frame && spec.no_frame_text.is_none() {
                return Err(format!("rule `{}` requires a frame but has no no_frame_text", spec.pattern));
            }
            let re = build(&spec.pattern)?;
            rules.push(Rule { spec, re });
        }
        let past = PAST_REFERENCES.map(|w| format!(r"\b{}\b", w.replace(' ', r"\s+"))).join("|");
        Ok(Self { rules, default_text: default_text.into(), past: build(&past)? })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let specs: Vec<RuleSpec> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::new(specs, DEFAULT_TEXT)
    }

    pub fn specs(&self) -> Vec<RuleSpec> {
        self.rules.iter().map(|r| r.spec.clone()).collect()
    }
}

const DEFAULT_TEXT: &str = "I'm not sure how to help with that. Could you say it another way?";

fn rule(pattern: &str, ack: &str) -> RuleSpec {
    RuleSpec {
        pattern: pattern.into(),
        action: RuleAction::Act,
        text: None,
        ack_text: Some(ack.into()),
        task_template: None,
        requires_frame: false,
        no_frame_text: None,
    }
}

fn reply(pattern: &str, text: &str) -> RuleSpec {
    RuleSpec { action: RuleAction::Respond, text: Some(text.into()), ack_text: None, ..rule(pattern, "") }
}

impl Default for TurnPolicy {
    fn default() -> Self {
        let specs = vec![
            RuleSpec {
                requires_frame: true,
                no_frame_text: Some("I can't see anything yet. Can you point the camera at it?".into()),
                task_template: Some("{utterance} (use the item in the latest camera frame)".into()),
                ..rule(r"\b(this|that|these|it)\b.*\bcart\b", "Let me take a look and add it.")
            },
            rule(r"\b(add|buy|order|cart|shopping list)\b", "Sure, adding that now."),
            rule(r"\b(send|email|message|text|reply|archive|draft)\b", "On it, I'll take care of that message."),
            rule(r"\b(schedule|calendar|remind|meeting|appointment)\b", "Okay, let me put that on your calendar."),
            rule(r"\b(turn on|turn off|switch|light|lamp|brightness)\b", "Okay, switching that now."),
            rule(r"\b(note|save|remember|write down|receipt)\b", "Got it, saving that."),
            rule(r"\b(search|look up|find|check|price|review|rating|how much|upload|file)\b", "Let me look that up."),
            reply(r"^\s*(hello|hi|hey)\b", "Hi! What can I do for you?"),
            reply(r"\b(thanks|thank you)\b", "You're welcome."),
        ];
        Self::new(specs, DEFAULT_TEXT).expect("built-in policy is valid")
    }
}

/// Decide how to handle one user turn. First matching rule wins; past
/// references are checked before any rule.
pub fn classify_turn(user_text: &str, frames_seen: usize, policy: &TurnPolicy) -> Decision {
    let utterance = user_text.trim();
    if policy.past.is_match(utterance) {
        return Decision::Act { task: MEMORY_TASK.replace("{utterance}", utterance), ack: MEMORY_ACK.into() };
    }
    for r in &policy.rules {
        if !r.re.is_match(utterance) {
            continue;
        }
        if r.spec.requires_frame && frames_seen == 0 {
            return Decision::Respond { text: r.spec.no_frame_text.clone().unwrap_or_default() };
        }
        return match r.spec.action {
            RuleAction::Respond => Decision::Respond { text: r.spec.text.clone().unwrap_or_default() },
            RuleAction::Act => Decision::Act {
                task: r.spec.task_template.as_deref().unwrap_or("{utterance}").replace("{utterance}", utterance),
                ack: r.spec.ack_text.clone().unwrap_or_default(),
            },
        };
    }
    Decision::Respond { text: policy.default_text.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shopping_list_acts_with_utterance() {
        let d = classify_turn("add eggs to my shopping list", 0, &TurnPolicy::default());
        assert!(matches!(d, Decision::Act { ref task, .. } if task == "add eggs to my shopping list"));
    }

    #[test]
    fn greeting_responds() {
        assert!(matches!(classify_turn("hello", 0, &TurnPolicy::default()), Decision::Respond { .. }));
    }

    #[test]
    fn past_references_always_act() {
        let p = TurnPolicy::default();
        for u in ["what did I do yesterday?", "hello, what was that place from last   week", "did i lock the door", "hi earlier you said"] {
            match classify_turn(u, 0, &p) {
                Decision::Act { task, .. } => assert!(task.starts_with("recall from memory"), "{u}"),
                d => panic!("{u}: {d:?}"),
            }
        }
        // Word boundaries: "beforehand" is not a past reference.
        assert!(matches!(classify_turn("hey beforehand", 0, &p), Decision::Respond { .. }));
    }

    #[test]
    fn camera_rule_needs_a_frame() {
        let p = TurnPolicy::default();
        assert!(matches!(classify_turn("add this to my cart", 0, &p), Decision::Respond { .. }));
        assert!(matches!(classify_turn("add this to my cart", 1, &p), Decision::Act { .. }));
    }

    #[test]
    fn act_rules_need_ack() {
        let bad = RuleSpec { ack_text: None, ..rule("x", "") };
        assert!(TurnPolicy::new(vec![bad], "d").is_err());
        let blank = rule("x", "  ");
        assert!(TurnPolicy::new(vec![blank], "d").is_err());
    }

    #[test]
    fn first_match_wins_and_json_round_trips() {
        let specs = vec![reply("eggs", "first"), reply("eggs", "second")];
        let p = TurnPolicy::new(specs.clone(), "d").unwrap();
        assert_eq!(classify_turn("EGGS", 0, &p), Decision::Respond { text: "first".into() });
        let json = serde_json::to_string(&specs).unwrap();
        assert_eq!(serde_json::from_str::<Vec<RuleSpec>>(&json).unwrap(), specs);
    }
}
