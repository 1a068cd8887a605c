//! Brute-force oracles and fixture generators shared by integration tests.
//! Nothing here calls the library's search or counting code.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Rows of a CSV file under `data/`, as header -> value maps.
pub fn read_data(name: &str) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(data_dir().join(name)).expect("data file");
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

/// Number of distinct directed simple cycles, by trying every cyclic vertex
/// sequence that starts at its smallest vertex.
pub fn brute_force_cycles(n: usize, edges: &[(usize, usize)]) -> u64 {
    let has = |a: usize, b: usize| edges.contains(&(a, b));
    fn extend(
        start: usize,
        path: &mut Vec<usize>,
        used: &mut [bool],
        n: usize,
        has: &dyn Fn(usize, usize) -> bool,
    ) -> u64 {
        let last = *path.last().unwrap();
        let mut count = if has(last, start) { 1 } else { 0 };
        for v in (start + 1)..n {
            if !used[v] && has(last, v) {
                used[v] = true;
                path.push(v);
                count += extend(start, path, used, n, has);
                path.pop();
                used[v] = false;
            }
        }
        count
    }
    let mut total = 0;
    for s in 0..n {
        let mut used = vec![false; n];
        used[s] = true;
        total += extend(s, &mut vec![s], &mut used, n, &has);
    }
    total
}

pub fn random_digraph(rng: &mut StdRng, max_nodes: usize, p: f64) -> (usize, Vec<(usize, usize)>) {
    let n = rng.random_range(1..=max_nodes);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    (n, edges)
}

/// Reference graph as raw triples over names `t0..`.
#[derive(Debug, Clone)]
pub struct RawTruth {
    pub names: Vec<String>,
    pub edges: Vec<(usize, usize, String)>,
}

pub const LABELS: [&str; 5] = ["causes", "is a", "reverse is a", "associated with", "Is A"];

impl RawTruth {
    pub fn random(rng: &mut StdRng, max_nodes: usize) -> Self {
        let n = rng.random_range(2..=max_nodes);
        let names = (0..n).map(|i| format!("t{i}")).collect();
        let mut edges = Vec::new();
        let m = rng.random_range(0..=2 * n);
        for _ in 0..m {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let label = LABELS[rng.random_range(0..LABELS.len())];
            edges.push((a, b, label.to_string()));
        }
        Self { names, edges }
    }

    fn traversable(label: &str) -> bool {
        let l = label.to_lowercase();
        l != "is a" && l != "reverse is a"
    }

    /// Exists a simple undirected path over traversable edges from `s` to
    /// `t` with at most `max_nodes` nodes, found by enumerating every simple
    /// path from `s`.
    pub fn path_exists(&self, s: usize, t: usize, max_nodes: usize) -> bool {
        if s == t {
            return max_nodes >= 1;
        }
        let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.names.len()];
        for (a, b, l) in &self.edges {
            if Self::traversable(l) && a != b {
                nbrs[*a].insert(*b);
                nbrs[*b].insert(*a);
            }
        }
        fn walk(v: usize, t: usize, len: usize, max: usize, seen: &mut Vec<bool>, nbrs: &[BTreeSet<usize>]) -> bool {
            if v == t {
                return len <= max;
            }
            if len >= max {
                return false;
            }
            for &w in &nbrs[v] {
                if !seen[w] {
                    seen[w] = true;
                    let found = walk(w, t, len + 1, max, seen, nbrs);
                    seen[w] = false;
                    if found {
                        return true;
                    }
                }
            }
            false
        }
        let mut seen = vec![false; self.names.len()];
        seen[s] = true;
        walk(s, t, 1, max_nodes, &mut seen, &nbrs)
    }

    /// Distinct directed traversable pairs touching `image`.
    pub fn relevant_edges(&self, image: &BTreeSet<usize>) -> usize {
        self.edges
            .iter()
            .filter(|(a, b, l)| Self::traversable(l) && a != b)
            .map(|(a, b, _)| (*a, *b))
            .filter(|(a, b)| image.contains(a) || image.contains(b))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Generated graph over names `g0..` with a mapping into a [`RawTruth`].
#[derive(Debug, Clone)]
pub struct RawGenerated {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub mapping: Vec<Option<usize>>,
}

impl RawGenerated {
    pub fn random(rng: &mut StdRng, truth: &RawTruth, max_nodes: usize) -> Self {
        let n = rng.random_range(1..=max_nodes);
        let mut edges = BTreeSet::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random_bool(0.25) {
                    edges.insert((a, b));
                }
            }
        }
        let mapping = (0..n)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..truth.names.len())))
            .collect();
        Self {
            n,
            edges: edges.into_iter().collect(),
            mapping,
        }
    }
}

/// Expected outcome per generated edge (`"hit"`, `"miss:no-path"`,
/// `"miss:unmapped-endpoint"`), plus precision and recall.
pub struct OracleReport {
    pub outcomes: BTreeMap<(String, String), &'static str>,
    pub n_hit: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn oracle_evaluate(truth: &RawTruth, gen: &RawGenerated, d: usize) -> OracleReport {
    let mut outcomes = BTreeMap::new();
    let mut n_hit = 0;
    for &(a, b) in &gen.edges {
        let o = match (gen.mapping[a], gen.mapping[b]) {
            (Some(x), Some(y)) => {
                if truth.path_exists(x, y, d) {
                    n_hit += 1;
                    "hit"
                } else {
                    "miss:no-path"
                }
            }
            _ => "miss:unmapped-endpoint",
        };
        outcomes.insert((format!("g{a}"), format!("g{b}")), o);
    }
    let image: BTreeSet<usize> = gen.mapping.iter().flatten().copied().collect();
    let rel = truth.relevant_edges(&image);
    let precision = if gen.edges.is_empty() {
        0.0
    } else {
        n_hit as f64 / gen.edges.len() as f64
    };
    let recall = if rel == 0 { 0.0 } else { n_hit as f64 / rel as f64 };
    OracleReport {
        outcomes,
        n_hit,
        precision,
        recall,
    }
}

/// The same fixture as library values.
pub fn to_library(
    truth: &RawTruth,
    gen: &RawGenerated,
) -> (
    causalkg::GroundTruthGraph,
    causalkg::ConceptGraph,
    causalkg::NodeMapping,
) {
    let t = causalkg::GroundTruthGraph::from_parts(
        truth.names.iter().map(String::as_str),
        truth
            .edges
            .iter()
            .map(|(a, b, l)| (truth.names[*a].as_str(), truth.names[*b].as_str(), l.as_str())),
    )
    .expect("truth fixture");
    let mut g = causalkg::ConceptGraph::new("g0").expect("root");
    for i in 1..gen.n {
        g.add_node(&format!("g{i}")).unwrap();
    }
    for (a, b) in &gen.edges {
        g.add_edge(&format!("g{a}"), &format!("g{b}"), causalkg::Provenance::Expansion)
            .unwrap();
    }
    let mut m = causalkg::NodeMapping::new();
    for (i, target) in gen.mapping.iter().enumerate() {
        m.insert(&format!("g{i}"), target.map(|t| truth.names[t].as_str()));
    }
    (t, g, m)
}

/// Piece of a synthetic model answer.
#[derive(Debug, Clone)]
pub enum Piece {
    Noise(String),
    Span(String),
    /// A `]` with no `[` pending.
    StrayClose,
    /// A `[` and some noise directly before a span, which supersedes it.
    StrayOpen(String, String),
}

pub fn render_answer(pieces: &[Piece]) -> String {
    let mut s = String::new();
    for p in pieces {
        match p {
            Piece::Noise(t) => s.push_str(t),
            Piece::Span(t) => {
                s.push('[');
                s.push_str(t);
                s.push(']');
            }
            Piece::StrayClose => s.push(']'),
            Piece::StrayOpen(noise, span) => {
                s.push('[');
                s.push_str(noise);
                s.push('[');
                s.push_str(span);
                s.push(']');
            }
        }
    }
    s
}

/// Bracket contents in order, as the pieces were built.
pub fn intended_spans(pieces: &[Piece]) -> Vec<String> {
    pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Span(t) | Piece::StrayOpen(_, t) => Some(t.clone()),
            _ => None,
        })
        .collect()
}

pub fn expected_concepts(spans: &[String], limit: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in spans {
        let norm = s.split_whitespace().collect::<Vec<_>>().join(" ");
        if norm.is_empty() || out.iter().any(|o| o.to_lowercase() == norm.to_lowercase()) {
            continue;
        }
        if out.len() < limit {
            out.push(norm);
        }
    }
    out
}

pub fn expected_verdict(spans: &[String]) -> Option<bool> {
    spans.iter().rev().find_map(|s| match s.trim().to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })
}

pub mod strategies {
    use super::Piece;
    use proptest::prelude::*;

    fn noise() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-zA-Z ,.'\n]{0,12}",
            Just(" yes ".to_string()),
            Just(" no, ".to_string()),
        ]
    }

    fn span_text() -> impl Strategy<Value = String> {
        prop_oneof![
            3 => "[a-zA-Z ]{0,10}",
            1 => Just("yes".to_string()),
            1 => Just(" No ".to_string()),
            1 => Just("Asthma".to_string()),
            1 => Just("asthma".to_string()),
            1 => Just("'Hypoxia'".to_string()),
        ]
    }

    pub fn piece() -> impl Strategy<Value = Piece> {
        prop_oneof![
            3 => noise().prop_map(Piece::Noise),
            3 => span_text().prop_map(Piece::Span),
            1 => Just(Piece::StrayClose),
            1 => (noise(), span_text()).prop_map(|(n, s)| Piece::StrayOpen(n, s)),
        ]
    }

    pub fn answer() -> impl Strategy<Value = Vec<Piece>> {
        proptest::collection::vec(piece(), 0..12).prop_map(|mut v| {
            // a stray close right after a stray open's span is fine; one
            // straight after an unclosed open cannot happen by construction
            v.dedup_by(|a, b| matches!((a, b), (Piece::StrayClose, Piece::StrayClose)));
            v
        })
    }
}

/// Checks every parser invariant on one answer; returns the violations.
pub fn parser_violations(pieces: &[Piece], limit: usize, candidates: &[String]) -> Vec<String> {
    use causalkg::parse::{parse_concepts, parse_match, parse_verdict, Verdict};
    let raw = render_answer(pieces);
    let spans = intended_spans(pieces);
    let mut bad = Vec::new();

    match parse_concepts(&raw, limit) {
        Ok(p) => {
            if p.concepts.len() > limit {
                bad.push(format!("length cap exceeded: {:?}", p.concepts));
            }
            let want = expected_concepts(&spans, limit);
            if p.concepts != want {
                bad.push(format!("concepts {:?} != {:?} for {raw:?}", p.concepts, want));
            }
        }
        Err(e) => {
            if !spans.is_empty() || raw.trim().is_empty() {
                bad.push(format!("concepts rejected {raw:?}: {e}"));
            }
        }
    }

    let got = parse_verdict(&raw).ok().map(|v| v == Verdict::Yes);
    if got != expected_verdict(&spans) {
        bad.push(format!("verdict {got:?} for {raw:?}"));
    }

    match parse_match(&raw, candidates) {
        Ok(Some(c)) => {
            if !candidates.contains(&c) {
                bad.push(format!("match {c:?} outside candidates"));
            }
            let last = spans
                .last()
                .map(|s| s.trim().trim_matches(['\'', '"']).trim().to_lowercase());
            if last.as_deref() != Some(c.to_lowercase().as_str()) {
                bad.push(format!("match {c:?} is not the last span of {raw:?}"));
            }
        }
        Ok(None) => {
            if spans
                .last()
                .is_none_or(|s| !s.trim().is_empty() && s.trim() != "''" && s.trim() != "\"\"")
            {
                bad.push(format!("empty match for {raw:?}"));
            }
        }
        Err(_) => {
            if let Some(last) = spans.last() {
                let key = last.trim().trim_matches(['\'', '"']).trim().to_lowercase();
                let key = key.split_whitespace().collect::<Vec<_>>().join(" ");
                if candidates.iter().any(|c| c.to_lowercase() == key) {
                    bad.push(format!("candidate rejected in {raw:?}"));
                }
            }
        }
    }
    bad
}
