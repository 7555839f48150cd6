use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parse::{ParsedTask, SkillName};
use super::{ExecutionResult, Gateway, FILES_DIR};
use crate::memory::{tokenize, NewMemory, RetrievalQuery};
use crate::router::RouteContext;
use crate::tool::{StepKind, StepRecord, ToolStatus};

/// A canned product page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub url: String,
    pub title: String,
    pub price: f64,
    pub rating: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub store: String,
    pub items: Vec<(String, String)>,
    pub total: Option<String>,
}

static PRICE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(.+?)\s+\$?(\d+\.\d{2})\s*$").expect("static pattern"));

/// Store name is the first non-empty line; items are `name  price` lines;
/// the total is the line starting with "total".
pub fn parse_receipt(text: &str) -> Receipt {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let store = lines.next().unwrap_or_default().to_string();
    let mut items = Vec::new();
    let mut total = None;
    for l in lines {
        let Some(c) = PRICE_LINE.captures(l) else { continue };
        let name = c[1].trim_end_matches(':').trim().to_string();
        let lower = name.to_lowercase();
        if lower == "total" || lower.starts_with("total ") {
            total = Some(c[2].to_string());
        } else if !(lower.contains("subtotal") || lower.contains("tax") || lower.contains("change") || lower.contains("cash")) {
            items.push((name, c[2].to_string()));
        }
    }
    Receipt { store, items, total }
}

/// Nominal step durations in ms. Steps are simulated, so these are fixed.
fn nominal_ms(kind: StepKind) -> u64 {
    match kind {
        StepKind::Shell => 300,
        StepKind::Browser => 2500,
        StepKind::FileIo => 40,
        StepKind::WebSearch => 1200,
        StepKind::Memory => 80,
        StepKind::Message => 600,
    }
}

#[derive(Default)]
struct Plan {
    steps: Vec<StepRecord>,
    artifacts: Vec<String>,
}

impl Plan {
    fn step(&mut self, kind: StepKind, detail: impl Into<String>) {
        self.steps.push(StepRecord { step_kind: kind, detail: detail.into(), duration_ms: nominal_ms(kind) });
    }

    fn ok(self, summary: impl Into<String>) -> ExecutionResult {
        ExecutionResult { status: ToolStatus::Ok, summary: summary.into(), steps: self.steps, artifacts: self.artifacts }
    }

    /// Fails at the most recent step. Earlier mutations stay in place.
    fn fail(self, summary: impl Into<String>) -> ExecutionResult {
        let at = self.steps.len();
        let summary = if at > 0 { format!("step {at} failed: {}", summary.into()) } else { summary.into() };
        ExecutionResult { status: ToolStatus::Error, summary, steps: self.steps, artifacts: self.artifacts }
    }
}

pub(super) async fn run(gw: &Gateway, task: &ParsedTask, ctx: Option<&RouteContext>) -> ExecutionResult {
    let plan = Plan::default();
    match task.skill {
        SkillName::Notes => notes(gw, task, ctx, plan),
        SkillName::EmailDraft => email(gw, task, plan),
        SkillName::Calendar => calendar(gw, task, plan),
        SkillName::Cart => cart(gw, task, plan),
        SkillName::Device => device(gw, task, plan),
        SkillName::Memory => memory(gw, task, plan),
        SkillName::WebLookup => web_lookup(gw, task, plan).await,
        SkillName::Files => files(gw, task, plan),
    }
}

fn append_jsonl(path: &Path, value: &Value) -> Result<(), String> {
    let line = serde_json::to_string(value).expect("value serializes") + "\n";
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0)
}

fn read_json_array(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<Vec<Value>>(&t).ok())
        .unwrap_or_default()
}

fn write_json(path: &Path, value: &Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn notes(gw: &Gateway, task: &ParsedTask, ctx: Option<&RouteContext>, mut plan: Plan) -> ExecutionResult {
    let text = task.arg("text").unwrap_or_default().to_string();
    let mut note = json!({"created_at": crate::epoch_ms(), "text": text});
    let mut summary = "Saved a note.".to_string();
    if task.arg("receipt").is_some() {
        let lower = text.to_lowercase();
        let refs: Vec<String> = ctx.map(|c| c.frame_refs.iter().map(|r| r.to_lowercase()).collect()).unwrap_or_default();
        let words = |s: &str| s.replace(['_', '-'], " ");
        let chosen = gw
            .fixtures
            .receipts
            .iter()
            .find(|(stem, _)| lower.contains(&words(stem)) || refs.iter().any(|r| r.contains(stem.as_str())))
            .or_else(|| gw.fixtures.receipts.first());
        let Some((stem, body)) = chosen else {
            plan.step(StepKind::FileIo, "read receipt: none available");
            return plan.fail("no receipt to read");
        };
        plan.step(StepKind::FileIo, format!("read receipt {stem}"));
        let r = parse_receipt(body);
        plan.step(StepKind::Shell, format!("extract fields: store, {} items, total", r.items.len()));
        let total = r.total.clone().unwrap_or_else(|| "unknown".into());
        summary = format!("Saved a note for {} with total ${total}.", r.store);
        note["title"] = json!(r.store);
        note["store"] = json!(r.store);
        note["total"] = json!(r.total);
        note["items"] = json!(r.items.iter().map(|(n, p)| json!({"name": n, "price": p})).collect::<Vec<_>>());
        note["text"] = json!(format!("{}: {} items, total ${total}", r.store, r.items.len()));
    }
    let path = gw.cfg.state_dir.join("notes.jsonl");
    let _g = gw.lock("notes");
    let id = count_lines(&path) + 1;
    note["id"] = json!(id);
    plan.step(StepKind::FileIo, "append notes.jsonl");
    if let Err(e) = append_jsonl(&path, &note) {
        return plan.fail(e);
    }
    plan.artifacts.push(format!("notes.jsonl#{id}"));
    plan.ok(summary)
}

fn email(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let to = task.arg("to").unwrap_or("(recipient to confirm)");
    let body = task.arg("body").unwrap_or_default();
    plan.step(StepKind::Message, format!("compose draft to {to}"));
    let path = gw.cfg.state_dir.join("drafts.jsonl");
    let _g = gw.lock("drafts");
    let id = count_lines(&path) + 1;
    plan.step(StepKind::FileIo, "save draft");
    if let Err(e) = append_jsonl(&path, &json!({"id": id, "to": to, "body": body, "created_at": crate::epoch_ms()})) {
        return plan.fail(e);
    }
    plan.artifacts.push(format!("drafts.jsonl#{id}"));
    plan.ok(format!("Drafted a message to {to}. It has not been sent."))
}

fn calendar(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let (weekday, time) = (task.arg("weekday"), task.arg("time"));
    plan.step(StepKind::Shell, format!("parse date: weekday={weekday:?} time={time:?}"));
    let (Some(weekday), Some(time)) = (weekday, time) else {
        return plan.fail("I need a weekday and a time like 3pm to schedule that.");
    };
    let title = task.arg("title").unwrap_or("event");
    let path = gw.cfg.state_dir.join("calendar.json");
    let _g = gw.lock("calendar");
    let mut events = read_json_array(&path);
    let id = events.len() + 1;
    events.push(json!({"id": id, "title": title, "weekday": weekday, "time": time}));
    plan.step(StepKind::FileIo, "write calendar.json");
    if let Err(e) = write_json(&path, &Value::Array(events)) {
        return plan.fail(e);
    }
    plan.artifacts.push(format!("calendar.json#{id}"));
    plan.ok(format!("Scheduled {title} on {weekday} at {time}."))
}

fn stems(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().map(|t| t.trim_end_matches('s').to_string()).collect()
}

/// Best product by shared terms; at least half the query must match.
fn find_product<'a>(products: &'a [Product], query: &str) -> Option<&'a Product> {
    let q = stems(query);
    if q.is_empty() {
        return None;
    }
    let mut best: Option<(&Product, usize)> = None;
    for p in products {
        let mut terms = stems(&p.title);
        terms.extend(p.tags.iter().flat_map(|t| stems(t)));
        let hits = q.intersection(&terms).count();
        if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
            best = Some((p, hits));
        }
    }
    best.filter(|(_, h)| *h * 2 >= q.len()).map(|(p, _)| p)
}

fn cart(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let Some(item) = task.arg("item") else {
        plan.step(StepKind::Shell, "identify item: nothing named");
        return plan.fail("I couldn't tell which item to add.");
    };
    plan.step(StepKind::WebSearch, format!("search store for \"{item}\""));
    let Some(product) = find_product(&gw.fixtures.products, item) else {
        return plan.fail(format!("no product matches \"{item}\""));
    };
    plan.step(StepKind::Browser, format!("open {} (rated {:.1}, ${:.2})", product.url, product.rating, product.price));
    if let Some(min) = task.arg("min_rating").and_then(|m| m.parse::<f64>().ok()) {
        if product.rating <= min {
            return plan.ok(format!(
                "{} is rated {:.1}, which does not exceed {min}, so I did not add it.",
                product.title, product.rating
            ));
        }
    }
    let path = gw.cfg.state_dir.join("cart.json");
    let _g = gw.lock("cart");
    let mut items = read_json_array(&path);
    let qty = match items.iter_mut().find(|i| i["name"] == json!(item)) {
        Some(existing) => {
            let q = existing["qty"].as_u64().unwrap_or(0) + 1;
            existing["qty"] = json!(q);
            q
        }
        None => {
            items.push(json!({"name": item, "title": product.title, "url": product.url, "price": product.price, "qty": 1}));
            1
        }
    };
    plan.step(StepKind::Browser, format!("add {item} to cart"));
    if let Err(e) = write_json(&path, &Value::Array(items)) {
        return plan.fail(e);
    }
    plan.artifacts.push(format!("cart.json#{item}"));
    let rated = if task.arg("min_rating").is_some() { format!(" It is rated {:.1}.", product.rating) } else { String::new() };
    plan.ok(format!("Added {item} to your cart (qty {qty}).{rated}"))
}

fn device(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let Some(target) = task.arg("target") else {
        plan.step(StepKind::Shell, "look up device: none named");
        return plan.fail("I couldn't tell which device you mean.");
    };
    let path = gw.cfg.state_dir.join("devices.json");
    let _g = gw.lock("devices");
    let mut devices: serde_json::Map<String, Value> = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let Some(dev) = devices.get_mut(target) else {
        plan.step(StepKind::Shell, format!("look up device \"{target}\": not found"));
        return plan.fail(format!("there is no device called \"{target}\""));
    };
    plan.step(StepKind::Shell, format!("look up device \"{target}\""));
    let summary = if let Some(state) = task.arg("state") {
        dev["on"] = json!(state == "on");
        format!("Turned the {target} {state}.")
    } else if let Some(color) = task.arg("color") {
        dev["color"] = json!(color);
        dev["on"] = json!(true);
        format!("Set the {target} to {color}.")
    } else {
        return plan.fail(format!("I don't know what to change on the {target}"));
    };
    plan.step(StepKind::Shell, format!("apply change to {target}"));
    plan.step(StepKind::FileIo, "write devices.json");
    if let Err(e) = write_json(&path, &Value::Object(devices)) {
        return plan.fail(e);
    }
    plan.artifacts.push(format!("devices.json#{target}"));
    plan.ok(summary)
}

fn memory(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let mut store = gw.memory.lock().unwrap_or_else(|p| p.into_inner());
    if task.arg("op") == Some("save") {
        let text = task.arg("text").unwrap_or_default();
        plan.step(StepKind::Memory, "append memory.jsonl");
        return match store.append(NewMemory { source: crate::memory::MemorySource::Tool, ..NewMemory::voice(text, crate::epoch_ms()) }) {
            Ok(id) => {
                plan.artifacts.push(format!("memory.jsonl#{id}"));
                plan.ok("Saved to your memory.")
            }
            Err(e) => plan.fail(e.to_string()),
        };
    }
    let query = task.arg("query").unwrap_or_default();
    plan.step(StepKind::Memory, format!("rank {} memories", store.len()));
    match store.retrieve(&RetrievalQuery::new(query, crate::epoch_ms(), 3)) {
        Ok(hits) if hits.is_empty() => plan.ok("I have nothing in your memory about that."),
        Ok(hits) => {
            let lines: Vec<_> = hits.iter().map(|h| h.entry.text.clone()).collect();
            plan.ok(format!("From your memory: {}", lines.join(" | ")))
        }
        Err(e) => plan.fail(e.to_string()),
    }
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"https?://\S+").expect("static pattern"));
static TITLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<title[^>]*>(.*?)</title>").expect("static pattern"));

async fn web_lookup(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let query = task.arg("query").unwrap_or_default();
    plan.step(StepKind::WebSearch, format!("search \"{query}\""));
    if let Some(p) = find_product(&gw.fixtures.products, query) {
        plan.step(StepKind::Browser, format!("open {}", p.url));
        return plan.ok(format!("{}: ${:.2}, rated {:.1}.", p.title, p.price, p.rating));
    }
    let Some(url) = URL.find(query).map(|m| m.as_str().to_string()) else {
        return plan.ok(format!("I found nothing about \"{query}\"."));
    };
    if !gw.cfg.allow_net {
        return plan.fail(format!("network access is disabled; cannot open {url}"));
    }
    plan.step(StepKind::Browser, format!("open {url}"));
    match gw.net.get(&url).send().await {
        Ok(r) => {
            let body = r.text().await.unwrap_or_default();
            let title = TITLE.captures(&body).map(|c| c[1].trim().to_string()).unwrap_or_else(|| url.clone());
            plan.ok(format!("Opened {title}."))
        }
        Err(e) => plan.fail(format!("could not open {url}: {e}")),
    }
}

/// Resolve `name` inside the sandbox, refusing anything that would escape it.
pub(super) fn sandbox_path(root: &Path, name: &str) -> Result<PathBuf, String> {
    let rel = Path::new(name);
    if name.is_empty() || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(format!("\"{name}\" is outside the file sandbox"));
    }
    Ok(root.join(rel))
}

fn files(gw: &Gateway, task: &ParsedTask, mut plan: Plan) -> ExecutionResult {
    let root = gw.cfg.state_dir.join(FILES_DIR);
    let _g = gw.lock(FILES_DIR);
    if task.arg("op") == Some("write") {
        let name = task.arg("name").unwrap_or("note.txt");
        plan.step(StepKind::FileIo, format!("write {name}"));
        let path = match sandbox_path(&root, name) {
            Ok(p) => p,
            Err(e) => return plan.fail(e),
        };
        if let Some(parent) = path.parent() {
            if let Err(e) = std::fs::create_dir_all(parent) {
                return plan.fail(e.to_string());
            }
        }
        if let Err(e) = std::fs::write(&path, task.arg("content").unwrap_or_default()) {
            return plan.fail(e.to_string());
        }
        plan.artifacts.push(format!("{FILES_DIR}/{name}"));
        return plan.ok(format!("Wrote {name}."));
    }
    plan.step(StepKind::FileIo, "list files");
    let mut names: Vec<String> = std::fs::read_dir(&root)
        .map(|rd| rd.flatten().map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    if names.is_empty() {
        plan.ok("Your files folder is empty.")
    } else {
        plan.ok(format!("Files: {}", names.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receipt_fields() {
        let r = parse_receipt("\n  Corner Market\n123 Main St\nEggs dozen   3.49\nMilk  $2.99\nSubtotal 6.48\nTax 0.52\nTOTAL  $7.00\n");
        assert_eq!(r.store, "Corner Market");
        assert_eq!(r.items, vec![("Eggs dozen".into(), "3.49".into()), ("Milk".into(), "2.99".into())]);
        assert_eq!(r.total.as_deref(), Some("7.00"));
    }

    #[test]
    fn sandbox_rejects_escapes() {
        let root = Path::new("/tmp/sb");
        assert!(sandbox_path(root, "a/b.txt").is_ok());
        for bad in ["../x", "/etc/passwd", "a/../../x", "", "./x"] {
            assert!(sandbox_path(root, bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn product_matching() {
        let ps = vec![
            Product { url: "u1".into(), title: "Large Brown Eggs, 12 ct".into(), price: 3.0, rating: 4.6, tags: vec![] },
            Product { url: "u2".into(), title: "Trail Mix".into(), price: 5.0, rating: 4.2, tags: vec!["snack".into()] },
        ];
        assert_eq!(find_product(&ps, "eggs").unwrap().url, "u1");
        assert_eq!(find_product(&ps, "egg").unwrap().url, "u1");
        assert_eq!(find_product(&ps, "the trail mix").unwrap().url, "u2");
        assert!(find_product(&ps, "lawn mower").is_none());
    }
}
