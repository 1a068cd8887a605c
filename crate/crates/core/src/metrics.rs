//! Structural statistics of generated graphs.

use crate::graph::ConceptGraph;
use serde::{Deserialize, Serialize, Serializer};
use std::collections::{HashMap, HashSet};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_CYCLE_CAP: u64 = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarize an empty list")]
    Empty,
    #[error("cycle cap must be at least 1")]
    ZeroCap,
}

/// Directed density |E| / (|V| (|V| - 1)); 0 below two nodes.
pub fn density(g: &ConceptGraph) -> f64 {
    density_of(g.node_count(), g.edge_count())
}

pub fn density_of(nodes: usize, edges: usize) -> f64 {
    if nodes < 2 {
        0.0
    } else {
        edges as f64 / (nodes as f64 * (nodes as f64 - 1.0))
    }
}

/// Fraction of edges whose reverse is also an edge; 0 without edges.
pub fn reciprocity(g: &ConceptGraph) -> f64 {
    let m = g.edge_count();
    if m == 0 {
        return 0.0;
    }
    let mutual = g.edges().filter(|e| g.contains_edge(e.dst, e.src)).count();
    mutual as f64 / m as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleCount {
    Exact(u64),
    /// Enumeration stopped at the cap; the true count is at least this.
    AtLeast(u64),
}

impl CycleCount {
    pub fn value(self) -> u64 {
        match self {
            CycleCount::Exact(n) | CycleCount::AtLeast(n) => n,
        }
    }

    pub fn is_capped(self) -> bool {
        matches!(self, CycleCount::AtLeast(_))
    }
}

impl fmt::Display for CycleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CycleCount::Exact(n) => write!(f, "{n}"),
            CycleCount::AtLeast(n) => write!(f, ">={n}"),
        }
    }
}

impl Serialize for CycleCount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CycleCount::Exact(n) => s.serialize_u64(*n),
            CycleCount::AtLeast(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for CycleCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(CycleCount::Exact(n)),
            Raw::S(s) => s
                .strip_prefix(">=")
                .and_then(|n| n.parse().ok())
                .map(CycleCount::AtLeast)
                .ok_or_else(|| serde::de::Error::custom(format!("bad cycle count {s:?}"))),
        }
    }
}

/// Adjacency lists over node indices in insertion order.
pub fn index_adjacency(g: &ConceptGraph) -> Vec<Vec<usize>> {
    let idx: HashMap<&str, usize> = g.node_names().enumerate().map(|(i, n)| (n, i)).collect();
    let mut adj = vec![Vec::new(); g.node_count()];
    for e in g.edges() {
        adj[idx[e.src]].push(idx[e.dst]);
    }
    adj
}

pub fn count_simple_cycles(g: &ConceptGraph, cap: u64) -> Result<CycleCount, MetricsError> {
    count_cycles_adj(&index_adjacency(g), cap)
}

/// Johnson's enumeration over an adjacency list, stopping once `cap` cycles
/// have been seen. Self-loops count as cycles of length one.
pub fn count_cycles_adj(adj: &[Vec<usize>], cap: u64) -> Result<CycleCount, MetricsError> {
    if cap == 0 {
        return Err(MetricsError::ZeroCap);
    }
    let n = adj.len();
    let mut radj = vec![Vec::new(); n];
    for (v, ws) in adj.iter().enumerate() {
        for &w in ws {
            radj[w].push(v);
        }
    }
    let mut count = 0u64;
    let mut blocked = vec![false; n];
    let mut bsets: Vec<HashSet<usize>> = vec![HashSet::new(); n];

    for s in 0..n {
        let comp = component_of(s, adj, &radj);
        if comp.iter().filter(|&&c| c).count() < 2 && !adj[s].contains(&s) {
            continue;
        }
        for v in 0..n {
            if comp[v] {
                blocked[v] = false;
                bsets[v].clear();
            }
        }
        // frames: (vertex, next neighbour position, found a cycle)
        let mut frames: Vec<(usize, usize, bool)> = vec![(s, 0, false)];
        blocked[s] = true;
        while let Some(top) = frames.last_mut() {
            let v = top.0;
            if top.1 < adj[v].len() {
                let w = adj[v][top.1];
                top.1 += 1;
                if !comp[w] {
                    continue;
                }
                if w == s {
                    top.2 = true;
                    count += 1;
                    if count >= cap {
                        return Ok(CycleCount::AtLeast(count));
                    }
                } else if !blocked[w] {
                    blocked[w] = true;
                    frames.push((w, 0, false));
                }
            } else {
                let (v, _, found) = frames.pop().expect("non-empty");
                if found {
                    unblock(v, &mut blocked, &mut bsets);
                } else {
                    for &w in &adj[v] {
                        if comp[w] {
                            bsets[w].insert(v);
                        }
                    }
                }
                if let Some(parent) = frames.last_mut() {
                    parent.2 |= found;
                }
            }
        }
    }
    Ok(CycleCount::Exact(count))
}

fn unblock(u: usize, blocked: &mut [bool], bsets: &mut [HashSet<usize>]) {
    blocked[u] = false;
    let mut stack = vec![u];
    while let Some(x) = stack.pop() {
        for w in std::mem::take(&mut bsets[x]) {
            if blocked[w] {
                blocked[w] = false;
                stack.push(w);
            }
        }
    }
}

/// Strongly connected component of `s` in the subgraph induced by vertices
/// `>= s`.
fn component_of(s: usize, adj: &[Vec<usize>], radj: &[Vec<usize>]) -> Vec<bool> {
    let reach = |edges: &[Vec<usize>]| {
        let mut seen = vec![false; edges.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &edges[v] {
                if w >= s && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    };
    let fwd = reach(adj);
    let bwd = reach(radj);
    fwd.iter().zip(&bwd).map(|(a, b)| *a && *b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdConvention {
    #[default]
    Sample,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub sd: f64,
}

/// Mean, extremes and standard deviation. A single value has SD 0 under
/// either convention.
pub fn summarize(values: &[f64], sd: SdConvention) -> Result<SummaryStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    let den = match sd {
        SdConvention::Sample => n.saturating_sub(1),
        SdConvention::Population => n,
    };
    let sd = if den == 0 { 0.0 } else { (ss / den as f64).sqrt() };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SummaryStats {
        n,
        mean: mean.clamp(min, max),
        min,
        max,
        sd,
    })
}

/// One row of a per-model attribute table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAttributes {
    pub model: String,
    pub condition: String,
    #[serde(default)]
    pub precision: Option<f64>,
    #[serde(default)]
    pub recall: Option<f64>,
    pub density: f64,
    pub reciprocity: f64,
    pub nodes: usize,
    pub edges: usize,
    pub cycles: CycleCount,
}

impl GraphAttributes {
    pub fn of(g: &ConceptGraph, cap: u64) -> Result<Self, MetricsError> {
        Ok(Self {
            model: g.metadata().model.clone(),
            condition: g.root().to_string(),
            precision: None,
            recall: None,
            density: density(g),
            reciprocity: reciprocity(g),
            nodes: g.node_count(),
            edges: g.edge_count(),
            cycles: count_simple_cycles(g, cap)?,
        })
    }
}

pub const ATTRIBUTE_COLUMNS: [&str; 9] = [
    "model",
    "condition",
    "precision",
    "recall",
    "density",
    "reciprocity",
    "nodes",
    "edges",
    "cycles",
];

/// CSV with the columns of [`ATTRIBUTE_COLUMNS`]; unknown precision/recall
/// are left blank.
pub fn attributes_csv(rows: &[GraphAttributes]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ATTRIBUTE_COLUMNS).expect("in-memory write");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.condition.clone(),
            opt(r.precision),
            opt(r.recall),
            format!("{:.3}", r.density),
            format!("{:.3}", r.reciprocity),
            r.nodes.to_string(),
            r.edges.to_string(),
            r.cycles.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Per-model summaries of the numeric columns, keyed `(model, attribute)`.
pub fn summarize_by_model(rows: &[GraphAttributes], sd: SdConvention) -> Vec<(String, String, SummaryStats)> {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let mut out = Vec::new();
    for m in models {
        let group: Vec<&GraphAttributes> = rows.iter().filter(|r| r.model == m).collect();
        let cols: [(&str, Vec<f64>); 7] = [
            ("precision", group.iter().filter_map(|r| r.precision).collect()),
            ("recall", group.iter().filter_map(|r| r.recall).collect()),
            ("density", group.iter().map(|r| r.density).collect()),
            ("reciprocity", group.iter().map(|r| r.reciprocity).collect()),
            ("nodes", group.iter().map(|r| r.nodes as f64).collect()),
            ("edges", group.iter().map(|r| r.edges as f64).collect()),
            ("cycles", group.iter().map(|r| r.cycles.value() as f64).collect()),
        ];
        for (name, values) in cols {
            if let Ok(s) = summarize(&values, sd) {
                out.push((m.to_string(), name.to_string(), s));
            }
        }
    }
    out
}
