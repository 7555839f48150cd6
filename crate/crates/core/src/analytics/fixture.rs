//! Deterministic synthetic deployment log.
//!
//! The generator lays out participants, days, sessions and interactions so
//! that the aggregate statistics land on a fixed set of published values.
//! Every count below is chosen so its share rounds to the published integer
//! percentage, and the generator checks its own output before returning.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::{compute_stats, StatsReport};
use super::{
    categorize, AnalyticsError, Category, InteractionRecord, LoadedLog, SessionRecord, ToolCallLog, INTERACTIONS_FILE,
    SESSIONS_FILE,
};
use crate::tool::{StepKind, StepRecord, EXECUTE_TOOL};

const SEED: u64 = 0x5EE_AC75;

/// Published aggregates, at the precision they were published.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureTargets {
    pub interactions: usize,
    pub sessions: usize,
    pub participant_days: usize,
    pub participants: usize,
    pub interactions_per_day: f64,
    pub max_interactions_per_day: usize,
    pub active_days_per_participant: f64,
    pub active_days_range: (usize, usize),
    pub total_session_hours: f64,
    pub session_median_min: f64,
    pub steps_per_command: f64,
    /// Integer percentages.
    pub step_kinds: [(StepKind, f64); 5],
    pub camera: f64,
    pub multi_source: f64,
    pub no_response: f64,
    pub depth: [f64; 4],
    pub time_of_day: [f64; 4],
    pub categories: [(Category, f64); 6],
    /// Seconds: overall, non-browser, browser, voice-only.
    pub latency_s: [f64; 4],
}

impl FixtureTargets {
    pub fn published() -> Self {
        Self {
            interactions: 555,
            sessions: 118,
            participant_days: 55,
            participants: 4,
            interactions_per_day: 10.1,
            max_interactions_per_day: 69,
            active_days_per_participant: 13.8,
            active_days_range: (5, 19),
            total_session_hours: 25.8,
            session_median_min: 16.0,
            steps_per_command: 3.2,
            step_kinds: [
                (StepKind::Shell, 32.0),
                (StepKind::Browser, 31.0),
                (StepKind::FileIo, 12.0),
                (StepKind::WebSearch, 12.0),
                (StepKind::Memory, 3.0),
            ],
            camera: 39.0,
            multi_source: 29.0,
            no_response: 2.0,
            depth: [21.0, 27.0, 23.0, 29.0],
            time_of_day: [26.0, 44.0, 27.0, 3.0],
            categories: [
                (Category::Communicate, 14.0),
                (Category::Retrieve, 30.0),
                (Category::Save, 16.0),
                (Category::Recall, 12.0),
                (Category::Shop, 19.0),
                (Category::Control, 9.0),
            ],
            latency_s: [12.2, 13.4, 15.5, 8.4],
        }
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

/// Mismatches between a report and the published targets, compared at the
/// published precision. Empty when everything matches.
pub fn check_targets(r: &StatsReport, t: &FixtureTargets) -> Vec<String> {
    let mut bad = Vec::new();
    let mut exact = |name: &str, got: usize, want: usize| {
        if got != want {
            bad.push(format!("{name}: got {got}, want {want}"));
        }
    };
    exact("interactions", r.interactions, t.interactions);
    exact("sessions", r.sessions, t.sessions);
    exact("participant-days", r.active_participant_days, t.participant_days);
    exact("participants", r.participants, t.participants);
    exact("max interactions per day", r.max_interactions_per_day, t.max_interactions_per_day);
    exact("min active days", r.min_active_days, t.active_days_range.0);
    exact("max active days", r.max_active_days, t.active_days_range.1);

    let mut near = |name: &str, got: f64, want: f64, decimals: i32| {
        if round_to(got, decimals) != want {
            bad.push(format!("{name}: got {got:.4}, want {want}"));
        }
    };
    near("interactions per day", r.interactions_per_day, t.interactions_per_day, 1);
    near("active days per participant", r.active_days_per_participant, t.active_days_per_participant, 1);
    near("total session hours", r.total_session_hours, t.total_session_hours, 1);
    near("session median min", r.session_median_min.unwrap_or(f64::NAN), t.session_median_min, 1);
    near("steps per command", r.steps_per_command, t.steps_per_command, 1);
    for (k, want) in t.step_kinds {
        near(&format!("step {}", k.as_str()), 100.0 * r.step_kinds.get(&k).copied().unwrap_or(0.0), want, 0);
    }
    near("camera", 100.0 * r.camera, t.camera, 0);
    near("multi-source", 100.0 * r.multi_source, t.multi_source, 0);
    near("no response", 100.0 * r.no_response, t.no_response, 0);
    let d = &r.chain_depth;
    for (name, got, want) in [
        ("depth 0", d.zero, t.depth[0]),
        ("depth 1", d.one, t.depth[1]),
        ("depth 2-3", d.two_to_three, t.depth[2]),
        ("depth 4+", d.four_plus, t.depth[3]),
    ] {
        near(name, 100.0 * got, want, 0);
    }
    let tod = &r.time_of_day;
    for (name, got, want) in [
        ("morning", tod.morning, t.time_of_day[0]),
        ("afternoon", tod.afternoon, t.time_of_day[1]),
        ("evening", tod.evening, t.time_of_day[2]),
        ("night", tod.night, t.time_of_day[3]),
    ] {
        near(name, 100.0 * got, want, 0);
    }
    for (c, want) in t.categories {
        near(&format!("category {c}"), 100.0 * r.categories.get(c), want, 0);
    }
    let l = &r.latency;
    for (name, got, want) in [
        ("latency overall", l.overall_s, t.latency_s[0]),
        ("latency non-browser", l.non_browser_s, t.latency_s[1]),
        ("latency browser", l.browser_s, t.latency_s[2]),
        ("latency voice-only", l.voice_only_s, t.latency_s[3]),
    ] {
        near(name, got.unwrap_or(f64::NAN), want, 1);
    }
    bad
}

const COMMUNICATE: &[&str] = &[
    "archive all except Sara's email",
    "reply to Alex that I'm running late",
    "send a message to the lab group that I'm on my way",
    "text Jordan the address of this place",
    "check my inbox for anything from the landlord",
    "draft an email to Priya about tomorrow",
];
const RETRIEVE_CAMERA: &[&str] = &[
    "What is this line for?",
    "how many calories are in this",
    "what kind of plant is this",
    "translate this sign for me",
    "who painted this",
    "what does this warning label mean",
];
const RETRIEVE_BLIND: &[&str] = &[
    "what's the weather tomorrow",
    "how far is the train station",
    "when does the pharmacy close",
    "what's a good substitute for buttermilk",
];
const SAVE: &[&str] = &[
    "save this hotel info",
    "remember where I parked",
    "note this receipt",
    "save this recipe for later",
    "write down this phone number",
];
const RECALL: &[&str] = &[
    "What did I do yesterday?",
    "where did I leave my keys",
    "what was the name of the restaurant from last week",
    "what did Sam say earlier",
    "who was at the meeting on Tuesday",
];
const SHOP: &[&str] = &[
    "add this to my cart",
    "what's the price of this on Amazon",
    "check the reviews for this charger",
    "buy more paper towels",
    "add eggs to my shopping list",
    "order another pack of these filters",
];
const CONTROL: &[&str] = &[
    "Turn off the light",
    "turn on the fan",
    "switch the lamp to warm white",
    "upload this photo to my drive",
    "open the shared folder for the trip",
    "lock the front door",
];

fn primary_source(c: Category) -> &'static str {
    match c {
        Category::Communicate => "email",
        Category::Retrieve | Category::Shop => "web",
        Category::Save => "files",
        Category::Recall => "memory",
        Category::Control => "device",
    }
}

const SECONDARY: [&str; 6] = ["memory", "calendar", "files", "email", "web", "device"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    VoiceOnly,
    NonBrowser,
    Browser,
}

#[derive(Debug, Clone)]
struct Spec {
    category: Category,
    kind: Kind,
    depth: usize,
    browser_steps: usize,
    steps: Vec<StepKind>,
    responded: bool,
    latency_ms: u64,
    tail_ms: u64,
    camera: bool,
}

impl Spec {
    /// Time from start to the end of the interaction.
    fn length_ms(&self) -> u64 {
        if self.responded {
            self.latency_ms + self.tail_ms
        } else {
            20_000
        }
    }
}

/// `k` values spread over [lo, hi).
fn spread(lo: u64, hi: u64, k: usize) -> impl Iterator<Item = u64> {
    (0..k as u64).map(move |i| lo + (hi - lo) * i / k as u64)
}

/// `k` values strictly inside (lo, hi).
fn spread_open(lo: u64, hi: u64, k: usize) -> impl Iterator<Item = u64> {
    (1..=k as u64).map(move |i| lo + (hi - lo) * i / (k as u64 + 1))
}

fn specs(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let spec = |category, kind| Spec {
        category,
        kind,
        depth: 0,
        browser_steps: 0,
        steps: Vec::new(),
        responded: true,
        latency_ms: 0,
        tail_ms: 0,
        camera: false,
    };
    let group = |parts: &[(Category, usize)], kind: Kind| -> Vec<Spec> {
        parts.iter().flat_map(|&(c, n)| std::iter::repeat_n(spec(c, kind), n)).collect()
    };
    let mut voice = group(&[(Category::Retrieve, 116)], Kind::VoiceOnly);
    let mut browser =
        group(&[(Category::Shop, 105), (Category::Retrieve, 50), (Category::Communicate, 45)], Kind::Browser);
    let mut plain = group(
        &[(Category::Communicate, 33), (Category::Save, 89), (Category::Recall, 66), (Category::Control, 51)],
        Kind::NonBrowser,
    );
    browser.shuffle(rng);
    plain.shuffle(rng);

    // Chain depth: 116 at zero, 150 at one, 64 at two, 64 at three, 161 at
    // four or more summing to 1306, so 1776 steps in all.
    let mut deep: Vec<usize> = (0..160).map(|i| 4 + (i * 5) % 9).collect();
    let mut diff = 1279 - deep.iter().sum::<usize>() as i64;
    let mut i = 0;
    while diff != 0 {
        let len = deep.len();
        let d = &mut deep[i % len];
        if diff > 0 && *d < 20 {
            *d += 1;
            diff -= 1;
        } else if diff < 0 && *d > 4 {
            *d -= 1;
            diff += 1;
        }
        i += 1;
    }
    deep.push(27);
    let browser_depths = deep.iter().copied().chain(std::iter::repeat_n(3, 39));
    for (s, d) in browser.iter_mut().zip(browser_depths) {
        s.depth = d;
    }
    let plain_depths = std::iter::repeat_n(1, 150).chain(std::iter::repeat_n(2, 64)).chain(std::iter::repeat_n(3, 25));
    for (s, d) in plain.iter_mut().zip(plain_depths) {
        s.depth = d;
    }

    // 551 browser steps: one each, then round-robin.
    let mut left = 551;
    for pass in 0.. {
        for s in browser.iter_mut() {
            if left > 0 && s.browser_steps == pass && s.depth > pass {
                s.browser_steps += 1;
                left -= 1;
            }
        }
        if left == 0 {
            break;
        }
    }
    let mut pool: Vec<StepKind> = [
        (StepKind::Shell, 568),
        (StepKind::FileIo, 213),
        (StepKind::WebSearch, 213),
        (StepKind::Memory, 53),
        (StepKind::Message, 178),
    ]
    .into_iter()
    .flat_map(|(k, n)| std::iter::repeat_n(k, n))
    .collect();
    pool.shuffle(rng);
    let mut pool = pool.into_iter();
    for s in browser.iter_mut().chain(plain.iter_mut()) {
        s.steps = std::iter::repeat_n(StepKind::Browser, s.browser_steps)
            .chain(pool.by_ref().take(s.depth - s.browser_steps))
            .collect();
        s.steps.shuffle(rng);
    }
    assert!(pool.next().is_none(), "step pool fully placed");

    // Latency layout: lower medians at 8.4 s, 13.4 s and 15.5 s per group
    // and 12.2 s overall, with 271 responses faster than 12.2 s.
    let mut lat: Vec<u64> = spread(3_000, 8_400, 57).chain([8_400]).chain(spread_open(8_400, 12_200, 58)).collect();
    lat.shuffle(rng);
    for (s, l) in voice.iter_mut().zip(lat) {
        s.latency_ms = l;
    }
    for s in plain.iter_mut().take(11) {
        s.responded = false;
    }
    let mut lat: Vec<u64> = spread(4_000, 12_200, 90)
        .chain([12_200])
        .chain(spread_open(12_200, 13_400, 22))
        .chain([13_400])
        .chain(spread_open(13_400, 40_000, 114))
        .collect();
    lat.shuffle(rng);
    for (s, l) in plain.iter_mut().skip(11).zip(lat) {
        s.latency_ms = l;
    }
    let mut lat: Vec<u64> = spread(5_000, 12_200, 65)
        .chain(spread_open(12_200, 15_500, 34))
        .chain([15_500])
        .chain(spread_open(15_500, 45_000, 100))
        .collect();
    lat.shuffle(rng);
    for (s, l) in browser.iter_mut().zip(lat) {
        s.latency_ms = l;
    }

    // Camera: every shop request plus 111 of the 166 retrieve requests.
    let mut retrieve_seen = 0;
    let mut all: Vec<Spec> = voice.into_iter().chain(browser).chain(plain).collect();
    for s in all.iter_mut() {
        s.tail_ms = rng.random_range(1_500..4_000);
        s.camera = match s.category {
            Category::Shop => true,
            Category::Retrieve => {
                retrieve_seen += 1;
                retrieve_seen <= 111
            }
            _ => false,
        };
    }
    all.shuffle(rng);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl Slot {
    /// Local start minute of the slot.
    fn start_min(self) -> u32 {
        match self {
            Slot::Morning => 8 * 60,
            Slot::Afternoon => 13 * 60,
            Slot::Evening => 18 * 60 + 30,
            Slot::Night => 22 * 60 + 30,
        }
    }
}

struct SessionPlan {
    participant: usize,
    day: u32,
    start_min: u32,
    size: usize,
    duration_ms: u64,
}

const PARTICIPANT_DAYS: [u32; 4] = [19, 17, 14, 5];
const TZ_OFFSET_MIN: [i32; 4] = [-300, -480, 60, 330];

/// Day index into (participant, day-of-participant).
fn day_owner(day: usize) -> (usize, u32) {
    let mut rest = day as u32;
    for (p, &n) in PARTICIPANT_DAYS.iter().enumerate() {
        if rest < n {
            return (p, rest);
        }
        rest -= n;
    }
    unreachable!("day index in range")
}

fn session_plans(rng: &mut ChaCha8Rng) -> Vec<SessionPlan> {
    // Sessions per slot with their interaction counts.
    let mut other: Vec<(Slot, usize)> = Vec::new();
    let mut add = |slot, n: usize, size: usize| other.extend(std::iter::repeat_n((slot, size), n));
    add(Slot::Morning, 20, 5);
    add(Slot::Morning, 11, 4);
    add(Slot::Afternoon, 28, 4);
    add(Slot::Afternoon, 21, 3);
    add(Slot::Evening, 26, 5);
    add(Slot::Evening, 5, 4);
    add(Slot::Night, 1, 5);
    add(Slot::Night, 3, 4);

    // Day 0 is the busiest day: three afternoon sessions of 23. The other 54
    // days take sessions k, k+54, k+108, so seven of them get three.
    let mut plans: Vec<SessionPlan> = [12 * 60 + 30, 14 * 60, 15 * 60 + 30]
        .into_iter()
        .map(|start_min| SessionPlan { participant: 0, day: 0, start_min, size: 23, duration_ms: 0 })
        .collect();
    for (k, (slot, size)) in other.into_iter().enumerate() {
        let (participant, day) = day_owner(1 + k % 54);
        let start_min = slot.start_min() + rng.random_range(0..50);
        plans.push(SessionPlan { participant, day, start_min, size, duration_ms: 0 });
    }

    // Durations: 59 above 16 min, one at 16 min, 58 below; 25.8 h in all.
    // Larger sessions get longer durations.
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(plans[i].size));
    let mut durations: Vec<u64> = (1..=59u64).rev().map(|i| 960_000 + i * 10_000).chain([960_000]).collect();
    let fixed: u64 = durations.iter().sum();
    let short_total = 92_880_000 - fixed;
    let mut shorts: Vec<u64> = (0..57u64).map(|i| 240_000 + ((i * 37) % 13) * 10_000).collect();
    let last = short_total - shorts.iter().sum::<u64>();
    assert!((240_000..900_000).contains(&last), "short session remainder {last} in range");
    shorts.push(last);
    shorts.sort_unstable_by(|a, b| b.cmp(a));
    durations.extend(shorts);
    for (i, d) in order.into_iter().zip(durations) {
        plans[i].duration_ms = d;
    }
    plans
}

fn utterance(c: Category, camera: bool, n: usize) -> &'static str {
    let list = match c {
        Category::Communicate => COMMUNICATE,
        Category::Retrieve if camera => RETRIEVE_CAMERA,
        Category::Retrieve => RETRIEVE_BLIND,
        Category::Save => SAVE,
        Category::Recall => RECALL,
        Category::Shop => SHOP,
        Category::Control => CONTROL,
    };
    list[n % list.len()]
}

fn step_detail(k: StepKind) -> &'static str {
    match k {
        StepKind::Shell => "ran a local command",
        StepKind::Browser => "loaded a page",
        StepKind::FileIo => "read or wrote a file",
        StepKind::WebSearch => "searched the web",
        StepKind::Memory => "queried memory",
        StepKind::Message => "drafted a message",
    }
}

/// Build the synthetic log. Panics if the layout misses a target, which
/// would be a bug in the generator itself.
pub fn generate_fixture() -> LoadedLog {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let specs = specs(&mut rng);
    let plans = session_plans(&mut rng);
    assert_eq!(plans.iter().map(|p| p.size).sum::<usize>(), specs.len());

    let epoch = NaiveDate::from_ymd_opt(2026, 3, 2).expect("valid date");
    let mut specs = specs.into_iter();
    let mut interactions = Vec::with_capacity(555);
    let mut sessions = Vec::with_capacity(plans.len());
    let mut sorted: Vec<&SessionPlan> = plans.iter().collect();
    sorted.sort_by_key(|p| (p.participant, p.day, p.start_min));
    for (si, plan) in sorted.into_iter().enumerate() {
        let tz = TZ_OFFSET_MIN[plan.participant];
        let date = epoch + chrono::Days::new(u64::from(plan.day) + 3 * plan.participant as u64);
        let local_ms = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis() as u64
            + u64::from(plan.start_min) * 60_000;
        let start = (local_ms as i64 - i64::from(tz) * 60_000) as u64;
        let members: Vec<Spec> = specs.by_ref().take(plan.size).collect();
        let busy: u64 = members.iter().map(Spec::length_ms).sum();
        assert!(busy <= plan.duration_ms, "session {si} cannot hold its interactions");
        let gap = (plan.duration_ms - busy) / members.len() as u64;

        let session_id = format!("s{:03}", si + 1);
        let mut ids = Vec::new();
        let mut at = start;
        for spec in members {
            let id = format!("i{:04}", interactions.len() + 1);
            let text = utterance(spec.category, spec.camera, interactions.len());
            let tool_calls: Vec<ToolCallLog> = if spec.depth == 0 {
                Vec::new()
            } else {
                let steps = spec
                    .steps
                    .iter()
                    .map(|&k| StepRecord {
                        step_kind: k,
                        detail: step_detail(k).to_string(),
                        duration_ms: rng.random_range(200..4_000),
                    })
                    .collect();
                vec![ToolCallLog { name: EXECUTE_TOOL.to_string(), task: Some(text.to_string()), steps }]
            };
            let category = categorize(text, &tool_calls);
            assert_eq!(category, spec.category, "template `{text}` categorizes as intended");
            let mut data_sources = BTreeSet::new();
            if spec.kind != Kind::VoiceOnly {
                let primary = primary_source(category);
                data_sources.insert(primary.to_string());
                if spec.depth >= 4 {
                    let second = SECONDARY.iter().cycle().skip(interactions.len() % 6).find(|s| **s != primary);
                    data_sources.insert(second.expect("another source").to_string());
                }
            }
            let (first_response_at, completed_at) = if spec.responded {
                (Some(at + spec.latency_ms), Some(at + spec.length_ms()))
            } else {
                (None, None)
            };
            interactions.push(InteractionRecord {
                id: id.clone(),
                session_id: session_id.clone(),
                participant: format!("p{}", plan.participant + 1),
                started_at: at,
                first_response_at,
                completed_at,
                tz_offset_min: tz,
                utterance: text.to_string(),
                used_camera: spec.camera,
                tool_calls,
                category,
                data_sources,
                responded: spec.responded,
            });
            ids.push(id);
            at += spec.length_ms() + gap;
        }
        sessions.push(SessionRecord {
            session_id,
            participant: format!("p{}", plan.participant + 1),
            started_at: start,
            duration_ms: plan.duration_ms,
            interactions: ids,
        });
    }

    for s in &sessions {
        let members: Vec<&InteractionRecord> = interactions.iter().filter(|r| r.session_id == s.session_id).collect();
        s.validate(&members).expect("session covers its interactions");
    }
    let report = compute_stats(&interactions, &sessions, 0);
    let misses = check_targets(&report, &FixtureTargets::published());
    assert!(misses.is_empty(), "fixture misses its targets: {misses:?}");
    LoadedLog { interactions, sessions, malformed: 0 }
}

/// Write the synthetic log as `interactions.jsonl` and `sessions.jsonl`.
pub fn write_fixture(dir: &Path) -> Result<LoadedLog, AnalyticsError> {
    let log = generate_fixture();
    let io = |path: &Path, e: std::io::Error| AnalyticsError::Storage { path: path.to_path_buf(), detail: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
    let path = dir.join(INTERACTIONS_FILE);
    let text = lines(log.interactions.iter().map(|r| serde_json::to_string(r).expect("serializes")).collect());
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    let path = dir.join(SESSIONS_FILE);
    let text = lines(log.sessions.iter().map(|r| serde_json::to_string(r).expect("serializes")).collect());
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(log)
}
