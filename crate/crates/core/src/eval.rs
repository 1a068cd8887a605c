//! Path-bounded precision and recall of a generated graph against a
//! reference graph.

use crate::graph::ConceptGraph;
use crate::mapping::{MappingError, NodeMapping};
use crate::truth::GroundTruthGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Longest accepted path, counted in nodes including both endpoints.
    pub d: usize,
    /// Candidates retrieved per generated node during mapping.
    pub k: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { d: 7, k: 5 }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.d < 2 {
            return Err(EvalError::Params(format!("d must be >= 2, got {}", self.d)));
        }
        if self.k < 1 {
            return Err(EvalError::Params(format!("k must be >= 1, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeOutcome {
    #[serde(rename = "hit")]
    Hit,
    #[serde(rename = "miss:no-path")]
    MissNoPath,
    #[serde(rename = "miss:unmapped-endpoint")]
    MissUnmappedEndpoint,
}

impl EdgeOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeOutcome::Hit => "hit",
            EdgeOutcome::MissNoPath => "miss:no-path",
            EdgeOutcome::MissUnmappedEndpoint => "miss:unmapped-endpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResult {
    pub src: String,
    pub dst: String,
    pub mapped_src: Option<String>,
    pub mapped_dst: Option<String>,
    pub outcome: EdgeOutcome,
    /// Nodes on the shortest reference path, for hits.
    pub path_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub root: String,
    pub model: String,
    pub d: usize,
    pub n_hit: usize,
    pub mappable_edges: usize,
    pub generated_edges: usize,
    pub relevant_reference_edges: usize,
    pub precision: f64,
    pub recall: f64,
    pub edges: Vec<EdgeResult>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores every generated edge. Edges whose endpoints both map are hits when
/// the reference graph connects their images within `params.d` nodes; all
/// others miss.
pub fn evaluate(
    generated: &ConceptGraph,
    truth: &GroundTruthGraph,
    mapping: &NodeMapping,
    params: &EvalParams,
) -> Result<EvalReport, EvalError> {
    params.validate()?;
    mapping.check(generated, truth)?;

    let image: BTreeSet<usize> = generated
        .node_names()
        .filter_map(|n| mapping.get(n))
        .filter_map(|t| truth.index_of(t))
        .collect();
    let relevant = truth
        .retained_edges()
        .filter(|(s, d)| image.contains(s) || image.contains(d))
        .count();

    let edges: Vec<EdgeResult> = generated
        .sorted_edges()
        .par_iter()
        .map(|e| {
            let ms = mapping.get(e.src);
            let md = mapping.get(e.dst);
            let (outcome, path_nodes) = match (ms.and_then(|t| truth.index_of(t)), md.and_then(|t| truth.index_of(t))) {
                (Some(s), Some(d)) => match truth.bounded_path_nodes(s, d, params.d) {
                    Some(n) => (EdgeOutcome::Hit, Some(n)),
                    None => (EdgeOutcome::MissNoPath, None),
                },
                _ => (EdgeOutcome::MissUnmappedEndpoint, None),
            };
            EdgeResult {
                src: e.src.to_string(),
                dst: e.dst.to_string(),
                mapped_src: ms.map(str::to_string),
                mapped_dst: md.map(str::to_string),
                outcome,
                path_nodes,
            }
        })
        .collect();

    let n_hit = edges.iter().filter(|e| e.outcome == EdgeOutcome::Hit).count();
    let mappable = edges
        .iter()
        .filter(|e| e.outcome != EdgeOutcome::MissUnmappedEndpoint)
        .count();
    Ok(EvalReport {
        root: generated.root().to_string(),
        model: generated.metadata().model.clone(),
        d: params.d,
        n_hit,
        mappable_edges: mappable,
        generated_edges: edges.len(),
        relevant_reference_edges: relevant,
        precision: ratio(n_hit, edges.len()),
        recall: ratio(n_hit, relevant),
        edges,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Summary lines followed by the per-edge ledger.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "root: {}  model: {}  d: {}", self.root, self.model, self.d);
        let _ = writeln!(
            out,
            "hits {} / mappable {} / generated {}  relevant reference edges {}",
            self.n_hit, self.mappable_edges, self.generated_edges, self.relevant_reference_edges
        );
        let _ = writeln!(out, "precision {:.4}  recall {:.4}", self.precision, self.recall);
        let _ = writeln!(out);
        let none = "none";
        let w = self
            .edges
            .iter()
            .map(|e| e.src.len() + e.dst.len() + 4)
            .max()
            .unwrap_or(4);
        for e in &self.edges {
            let pair = format!("{} -> {}", e.src, e.dst);
            let mapped = format!(
                "{} -> {}",
                e.mapped_src.as_deref().unwrap_or(none),
                e.mapped_dst.as_deref().unwrap_or(none)
            );
            let path = e.path_nodes.map(|n| format!(" ({n} nodes)")).unwrap_or_default();
            let _ = writeln!(out, "{pair:<w$}  {:<22}  {mapped}{path}", e.outcome.as_str());
        }
        out
    }
}
