//! Append-only personal memory ranked by importance, recency and relevancy.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HALF_LIFE_HOURS: f64 = 72.0;
pub const DEFAULT_VOICE_IMPORTANCE: f64 = 0.5;
const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{path}: {detail}")]
    Storage { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Voice,
    Tool,
    Import,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: u64,
    pub text: String,
    pub created_at: u64,
    pub importance: f64,
    #[serde(default)]
    pub tags: Vec<String>,
    pub source: MemorySource,
}

/// An entry before it has an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewMemory {
    pub text: String,
    pub created_at: u64,
    #[serde(default = "default_importance")]
    pub importance: f64,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "default_source")]
    pub source: MemorySource,
}

fn default_importance() -> f64 {
    DEFAULT_VOICE_IMPORTANCE
}

fn default_source() -> MemorySource {
    MemorySource::Import
}

impl NewMemory {
    pub fn voice(text: impl Into<String>, created_at: u64) -> Self {
        Self {
            text: text.into(),
            created_at,
            importance: DEFAULT_VOICE_IMPORTANCE,
            tags: Vec::new(),
            source: MemorySource::Voice,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub text: String,
    pub now: u64,
    pub k: usize,
    pub half_life_hours: f64,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>, now: u64, k: usize) -> Self {
        Self { text: text.into(), now, k, half_life_hours: DEFAULT_HALF_LIFE_HOURS }
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.k == 0 {
            return Err(MemoryError::InvalidQuery("k must be at least 1".into()));
        }
        if !(self.half_life_hours > 0.0 && self.half_life_hours.is_finite()) {
            return Err(MemoryError::InvalidQuery("half_life_hours must be positive".into()));
        }
        Ok(())
    }
}

/// Relative weight of each component. Equal weights give the plain mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub importance: f64,
    pub recency: f64,
    pub relevancy: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { importance: 1.0, recency: 1.0, relevancy: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub importance: f64,
    pub recency: f64,
    pub relevancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry: MemoryEntry,
    pub score: f64,
    pub components: Components,
}

/// Lowercase terms split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn recency(created_at: u64, now: u64, half_life_hours: f64) -> f64 {
    let dt_hours = now.saturating_sub(created_at) as f64 / MS_PER_HOUR;
    (-dt_hours / half_life_hours).exp2()
}

pub fn relevancy(query_terms: &BTreeSet<String>, entry_text: &str) -> f64 {
    if query_terms.is_empty() {
        return 0.0;
    }
    let entry_terms = tokenize(entry_text);
    query_terms.intersection(&entry_terms).count() as f64 / query_terms.len() as f64
}

fn score_with(entry: &MemoryEntry, terms: &BTreeSet<String>, q: &RetrievalQuery, w: ScoreWeights) -> ScoredEntry {
    let components = Components {
        importance: entry.importance.clamp(0.0, 1.0),
        recency: recency(entry.created_at, q.now, q.half_life_hours),
        relevancy: relevancy(terms, &entry.text),
    };
    let total = w.importance + w.recency + w.relevancy;
    let score = (w.importance * components.importance
        + w.recency * components.recency
        + w.relevancy * components.relevancy)
        / total;
    ScoredEntry { entry: entry.clone(), score, components }
}

pub fn score(entry: &MemoryEntry, query: &RetrievalQuery) -> ScoredEntry {
    score_with(entry, &tokenize(&query.text), query, ScoreWeights::default())
}

/// Result order: higher score, then newer, then lower id.
pub fn rank(a: &ScoredEntry, b: &ScoredEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.entry.created_at.cmp(&a.entry.created_at))
        .then(a.entry.id.cmp(&b.entry.id))
}

struct Ranked(ScoredEntry);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

/// Memory backed by a JSONL file, or held only in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    path: Option<PathBuf>,
    entries: Vec<MemoryEntry>,
    weights: ScoreWeights,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, MemoryError> {
        let storage = |detail: String| MemoryError::Storage { path: path.to_path_buf(), detail };
        let mut entries = Vec::new();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let e: MemoryEntry =
                        serde_json::from_str(line).map_err(|e| storage(format!("line {}: {e}", i + 1)))?;
                    entries.push(e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(storage(e.to_string())),
        }
        Ok(Self { path: Some(path.to_path_buf()), entries, weights: ScoreWeights::default() })
    }

    pub fn with_weights(mut self, weights: ScoreWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn next_id(&self) -> u64 {
        self.entries.last().map_or(1, |e| e.id + 1)
    }

    pub fn append(&mut self, new: NewMemory) -> Result<u64, MemoryError> {
        Ok(self.append_all(vec![new])?[0])
    }

    /// Append several entries with one write. Nothing is stored if any is
    /// invalid.
    pub fn append_all(&mut self, batch: Vec<NewMemory>) -> Result<Vec<u64>, MemoryError> {
        if batch.iter().any(|n| n.text.trim().is_empty()) {
            return Err(MemoryError::EmptyText);
        }
        let first = self.next_id();
        let fresh: Vec<MemoryEntry> = batch
            .into_iter()
            .zip(first..)
            .map(|(n, id)| MemoryEntry {
                id,
                text: n.text,
                created_at: n.created_at,
                importance: n.importance.clamp(0.0, 1.0),
                tags: n.tags,
                source: n.source,
            })
            .collect();
        if let Some(path) = &self.path {
            let mut buf = String::new();
            for e in &fresh {
                buf.push_str(&serde_json::to_string(e).expect("entry serializes"));
                buf.push('\n');
            }
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(buf.as_bytes()))
                .map_err(|e| MemoryError::Storage { path: path.clone(), detail: e.to_string() })?;
        }
        let ids = fresh.iter().map(|e| e.id).collect();
        self.entries.extend(fresh);
        Ok(ids)
    }

    /// Bulk-load entries from a JSONL file of [`NewMemory`] lines.
    pub fn import(&mut self, path: &Path) -> Result<usize, MemoryError> {
        let storage = |detail: String| MemoryError::Storage { path: path.to_path_buf(), detail };
        let text = std::fs::read_to_string(path).map_err(|e| storage(e.to_string()))?;
        let batch = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str::<NewMemory>(l).map_err(|e| storage(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.append_all(batch)?.len())
    }

    /// Top `k` entries, best first.
    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<Vec<ScoredEntry>, MemoryError> {
        query.validate()?;
        let terms = tokenize(&query.text);
        let mut heap = BinaryHeap::with_capacity(query.k + 1);
        for e in &self.entries {
            heap.push(Ranked(score_with(e, &terms, query, self.weights)));
            if heap.len() > query.k {
                heap.pop();
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|r| r.0).collect())
    }
}
