//! Heap-based retrieval against a brute-force scored sort.

use std::collections::HashSet;

use agentloop_core::memory::{recency, MemorySource, MemoryStore, NewMemory, RetrievalQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: u64 = 3_600_000;
const WORDS: [&str; 16] = [
    "hotel", "room", "eggs", "milk", "Parking", "level", "receipt", "total", "gate", "flight", "dentist",
    "friday", "wifi", "password", "coffee", "filters",
];

fn words(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn terms(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// (id, score) of the best `k`, from scoring and sorting everything.
fn brute_force(store: &MemoryStore, q: &RetrievalQuery) -> Vec<(u64, f64)> {
    let qt = terms(&q.text);
    let mut all: Vec<(f64, u64, u64)> = store
        .entries()
        .iter()
        .map(|e| {
            let age_h = q.now.saturating_sub(e.created_at) as f64 / H as f64;
            let rec = 0.5f64.powf(age_h / q.half_life_hours);
            let et = terms(&e.text);
            let rel = if qt.is_empty() { 0.0 } else { qt.iter().filter(|t| et.contains(*t)).count() as f64 / qt.len() as f64 };
            ((e.importance + rec + rel) / 3.0, e.created_at, e.id)
        })
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    all.into_iter().take(q.k).map(|(s, _, id)| (id, s)).collect()
}

#[test]
fn retrieve_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e3);
    for store_no in 0..100 {
        let n = rng.random_range(0..=1000);
        let now = 30 * 24 * H;
        let batch = (0..n)
            .map(|_| NewMemory {
                text: format!("{} note", words(&mut rng, 7)),
                // Coarse timestamps and importances force ties.
                created_at: rng.random_range(0..=30u64) * 24 * H,
                importance: f64::from(rng.random_range(0..=4u8)) / 4.0,
                tags: Vec::new(),
                source: MemorySource::Import,
            })
            .collect();
        let mut store = MemoryStore::in_memory();
        store.append_all(batch).unwrap();
        for _ in 0..100 {
            let mut q = RetrievalQuery::new(words(&mut rng, 3), now, 1);
            q.k = rng.random_range(1..=12);
            q.half_life_hours = [24.0, 72.0, 168.0][rng.random_range(0..3)];
            let got: Vec<(u64, f64)> = store.retrieve(&q).unwrap().iter().map(|s| (s.entry.id, s.score)).collect();
            let want = brute_force(&store, &q);
            assert_eq!(got.len(), want.len(), "store {store_no}");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.0, w.0, "store {store_no} query {:?}: {got:?} vs {want:?}", q.text);
                assert!((g.1 - w.1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn recency_is_monotone_in_age() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let now = 400 * 24 * H;
    for _ in 0..10_000 {
        let a = rng.random_range(0..=now);
        let b = rng.random_range(0..=now);
        let hl = rng.random_range(1.0..500.0);
        let (ra, rb) = (recency(a, now, hl), recency(b, now, hl));
        assert!((0.0..=1.0).contains(&ra));
        if a <= b {
            assert!(ra <= rb, "older {a} scored {ra} above newer {b} at {rb}");
        } else {
            assert!(ra >= rb);
        }
    }
}

#[test]
fn newer_wins_when_otherwise_equal() {
    let mut store = MemoryStore::in_memory();
    store.append(NewMemory::voice("hotel room 204", 5 * H)).unwrap();
    store.append(NewMemory::voice("hotel room 305", 5 * H)).unwrap();
    store.append(NewMemory::voice("hotel room 412", 9 * H)).unwrap();
    let top = store.retrieve(&RetrievalQuery::new("hotel room", 10 * H, 3)).unwrap();
    let ids: Vec<u64> = top.iter().map(|s| s.entry.id).collect();
    assert_eq!(ids, vec![3, 1, 2]);
}
