use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Category, InteractionRecord, SessionRecord};
use crate::tool::StepKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOfDay {
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl TimeOfDay {
    /// Local hour cut points: 05-12, 12-17, 17-22, 22-05.
    pub fn from_hour(hour: u32) -> Self {
        match hour {
            5..=11 => TimeOfDay::Morning,
            12..=16 => TimeOfDay::Afternoon,
            17..=21 => TimeOfDay::Evening,
            _ => TimeOfDay::Night,
        }
    }
}

fn local_secs(r: &InteractionRecord) -> i64 {
    (r.started_at / 1000) as i64 + i64::from(r.tz_offset_min) * 60
}

pub(crate) fn local_day(r: &InteractionRecord) -> i64 {
    local_secs(r).div_euclid(86_400)
}

pub(crate) fn local_hour(r: &InteractionRecord) -> u32 {
    (local_secs(r).rem_euclid(86_400) / 3600) as u32
}

/// Element at index (n-1)/2 of the sorted values.
pub(crate) fn lower_median(mut v: Vec<u64>) -> Option<u64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyMedians {
    pub overall_s: Option<f64>,
    pub non_browser_s: Option<f64>,
    pub browser_s: Option<f64>,
    pub voice_only_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthShares {
    pub zero: f64,
    pub one: f64,
    pub two_to_three: f64,
    pub four_plus: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeOfDayShares {
    pub morning: f64,
    pub afternoon: f64,
    pub evening: f64,
    pub night: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryShares {
    pub communicate: f64,
    pub retrieve: f64,
    pub save: f64,
    pub recall: f64,
    pub shop: f64,
    pub control: f64,
}

impl CategoryShares {
    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Communicate => self.communicate,
            Category::Retrieve => self.retrieve,
            Category::Save => self.save,
            Category::Recall => self.recall,
            Category::Shop => self.shop,
            Category::Control => self.control,
        }
    }
}

/// Aggregates over an interaction log. Shares are fractions in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub empty: bool,
    pub interactions: usize,
    pub sessions: usize,
    pub participants: usize,
    pub active_participant_days: usize,
    pub interactions_per_day: f64,
    pub max_interactions_per_day: usize,
    pub active_days_per_participant: f64,
    pub min_active_days: usize,
    pub max_active_days: usize,
    pub total_session_hours: f64,
    pub session_median_min: Option<f64>,
    pub total_steps: usize,
    pub steps_per_command: f64,
    /// Share of all steps per step kind.
    pub step_kinds: BTreeMap<StepKind, f64>,
    pub camera: f64,
    pub latency: LatencyMedians,
    pub chain_depth: DepthShares,
    pub max_chain_depth: usize,
    pub multi_source: f64,
    pub no_response: f64,
    pub time_of_day: TimeOfDayShares,
    pub categories: CategoryShares,
    pub malformed_lines: usize,
}

pub fn compute_stats(interactions: &[InteractionRecord], sessions: &[SessionRecord], malformed: usize) -> StatsReport {
    let n = interactions.len();
    let mut report = StatsReport { empty: n == 0, sessions: sessions.len(), malformed_lines: malformed, ..Default::default() };
    if n == 0 {
        return report;
    }
    let share = |count: usize| count as f64 / n as f64;
    let count_where = |f: &dyn Fn(&InteractionRecord) -> bool| interactions.iter().filter(|r| f(r)).count();
    report.interactions = n;

    let mut per_day: HashMap<(&str, i64), usize> = HashMap::new();
    for r in interactions {
        *per_day.entry((r.participant.as_str(), local_day(r))).or_default() += 1;
    }
    let mut days_per_participant: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, _) in per_day.keys() {
        *days_per_participant.entry(p).or_default() += 1;
    }
    report.participants = days_per_participant.len();
    report.active_participant_days = per_day.len();
    report.interactions_per_day = n as f64 / per_day.len() as f64;
    report.max_interactions_per_day = per_day.values().copied().max().unwrap_or(0);
    report.active_days_per_participant = per_day.len() as f64 / days_per_participant.len() as f64;
    report.min_active_days = days_per_participant.values().copied().min().unwrap_or(0);
    report.max_active_days = days_per_participant.values().copied().max().unwrap_or(0);

    report.total_session_hours = sessions.iter().map(|s| s.duration_ms).sum::<u64>() as f64 / 3_600_000.0;
    report.session_median_min =
        lower_median(sessions.iter().map(|s| s.duration_ms).collect()).map(|ms| ms as f64 / 60_000.0);

    let mut kinds: BTreeMap<StepKind, usize> = StepKind::ALL.iter().map(|k| (*k, 0)).collect();
    for s in interactions.iter().flat_map(|r| r.steps()) {
        *kinds.entry(s.step_kind).or_default() += 1;
    }
    let total_steps: usize = kinds.values().sum();
    report.total_steps = total_steps;
    report.steps_per_command = total_steps as f64 / n as f64;
    report.step_kinds = kinds
        .into_iter()
        .map(|(k, c)| (k, if total_steps == 0 { 0.0 } else { c as f64 / total_steps as f64 }))
        .collect();

    report.camera = share(count_where(&|r| r.used_camera));
    report.multi_source = share(count_where(&|r| r.data_sources.len() >= 2));
    report.no_response = share(count_where(&|r| !r.responded));

    let secs = |v: Vec<u64>| lower_median(v).map(|ms| ms as f64 / 1000.0);
    let latencies = |f: &dyn Fn(&InteractionRecord) -> bool| -> Vec<u64> {
        interactions.iter().filter(|r| f(r)).filter_map(InteractionRecord::latency_ms).collect()
    };
    report.latency = LatencyMedians {
        overall_s: secs(latencies(&|_| true)),
        non_browser_s: secs(latencies(&|r| r.chain_depth() > 0 && !r.used_browser())),
        browser_s: secs(latencies(&|r| r.used_browser())),
        voice_only_s: secs(latencies(&|r| r.chain_depth() == 0)),
    };

    report.chain_depth = DepthShares {
        zero: share(count_where(&|r| r.chain_depth() == 0)),
        one: share(count_where(&|r| r.chain_depth() == 1)),
        two_to_three: share(count_where(&|r| (2..=3).contains(&r.chain_depth()))),
        four_plus: share(count_where(&|r| r.chain_depth() >= 4)),
    };
    report.max_chain_depth = interactions.iter().map(InteractionRecord::chain_depth).max().unwrap_or(0);

    let tod = |t: TimeOfDay| share(count_where(&|r| TimeOfDay::from_hour(local_hour(r)) == t));
    report.time_of_day = TimeOfDayShares {
        morning: tod(TimeOfDay::Morning),
        afternoon: tod(TimeOfDay::Afternoon),
        evening: tod(TimeOfDay::Evening),
        night: tod(TimeOfDay::Night),
    };

    let cat = |c: Category| share(count_where(&|r| r.category == c));
    report.categories = CategoryShares {
        communicate: cat(Category::Communicate),
        retrieve: cat(Category::Retrieve),
        save: cat(Category::Save),
        recall: cat(Category::Recall),
        shop: cat(Category::Shop),
        control: cat(Category::Control),
    };
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            other => Err(AnalyticsError::UnknownFormat(other.to_string())),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn opt_s(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.1} s"))
}

pub fn render_report(report: &StatsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(r: &StatsReport) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut row = |k: &str, v: String| rows.push((k.to_string(), v));
    if r.empty {
        row("interactions", "0 (empty log)".into());
        row("malformed lines", r.malformed_lines.to_string());
    } else {
        row("interactions", r.interactions.to_string());
        row("sessions", r.sessions.to_string());
        row("participants", r.participants.to_string());
        row("active participant-days", r.active_participant_days.to_string());
        row("interactions per day", format!("{:.1} (max {})", r.interactions_per_day, r.max_interactions_per_day));
        row(
            "active days per participant",
            format!("{:.1} (range {}-{})", r.active_days_per_participant, r.min_active_days, r.max_active_days),
        );
        row("total session hours", format!("{:.1}", r.total_session_hours));
        row("session median", r.session_median_min.map_or("-".into(), |m| format!("{m:.1} min")));
        row("steps per command", format!("{:.1} ({} steps)", r.steps_per_command, r.total_steps));
        for (k, v) in &r.step_kinds {
            row(&format!("  step {}", k.as_str()), pct(*v));
        }
        row("camera", pct(r.camera));
        row("latency median", opt_s(r.latency.overall_s));
        row("  non-browser", opt_s(r.latency.non_browser_s));
        row("  browser", opt_s(r.latency.browser_s));
        row("  voice-only", opt_s(r.latency.voice_only_s));
        let d = &r.chain_depth;
        row("chain depth 0", pct(d.zero));
        row("chain depth 1", pct(d.one));
        row("chain depth 2-3", pct(d.two_to_three));
        row("chain depth 4+", format!("{} (max {})", pct(d.four_plus), r.max_chain_depth));
        row("multi-source", pct(r.multi_source));
        row("no response", pct(r.no_response));
        let t = &r.time_of_day;
        row("morning (05-12)", pct(t.morning));
        row("afternoon (12-17)", pct(t.afternoon));
        row("evening (17-22)", pct(t.evening));
        row("night (22-05)", pct(t.night));
        for c in Category::ALL {
            row(&format!("category {c}"), pct(r.categories.get(c)));
        }
        row("malformed lines", r.malformed_lines.to_string());
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}
