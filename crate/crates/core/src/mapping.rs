//! Generated node name -> reference concept, by embedding retrieval plus an
//! LLM picking among the retrieved candidates.

use crate::embed::{EmbedError, EmbeddingIndex, EmbeddingProvider};
use crate::eval::EvalParams;
use crate::gateway::{Gateway, GatewayError};
use crate::graph::ConceptGraph;
use crate::parse::parse_match;
use crate::prompts::{PromptSet, TemplateError, TemplateName};
use crate::truth::GroundTruthGraph;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use thiserror::Error;
use tracing::{info, warn};

pub const NONE: &str = "none";

#[derive(Debug, Error)]
pub enum MappingError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Backend(GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("mapping has no entry for {} generated node(s): {}", .0.len(), .0.join(", "))]
    Unmapped(Vec<String>),
    #[error("mapping targets not in the reference graph: {}", .0.join(", "))]
    UnknownTarget(Vec<String>),
    #[error("mapping file: {0}")]
    Malformed(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One entry per generated node; `None` means no reference counterpart.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeMapping {
    entries: BTreeMap<String, Option<String>>,
}

impl NodeMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, generated: &str, target: Option<&str>) {
        self.entries.insert(generated.to_string(), target.map(str::to_string));
    }

    /// `None` both for unknown nodes and nodes mapped to nothing; use
    /// [`NodeMapping::contains`] to tell them apart.
    pub fn get(&self, generated: &str) -> Option<&str> {
        self.entries.get(generated).and_then(|t| t.as_deref())
    }

    pub fn contains(&self, generated: &str) -> bool {
        self.entries.contains_key(generated)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<&str>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_deref()))
    }

    pub fn mapped_count(&self) -> usize {
        self.entries.values().filter(|v| v.is_some()).count()
    }

    pub fn missing_nodes(&self, graph: &ConceptGraph) -> Vec<String> {
        graph
            .sorted_node_names()
            .into_iter()
            .filter(|n| !self.contains(n))
            .map(str::to_string)
            .collect()
    }

    /// Every node of `graph` has an entry and every target exists in `truth`.
    pub fn check(&self, graph: &ConceptGraph, truth: &GroundTruthGraph) -> Result<(), MappingError> {
        let missing = self.missing_nodes(graph);
        if !missing.is_empty() {
            return Err(MappingError::Unmapped(missing));
        }
        let unknown: Vec<String> = self
            .entries
            .values()
            .flatten()
            .filter(|t| truth.index_of(t).is_none())
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(MappingError::UnknownTarget(unknown));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("mapping serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MappingError> {
        serde_json::from_str(text).map_err(|e| MappingError::Malformed(e.to_string()))
    }
}

impl Serialize for NodeMapping {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.iter().map(|(k, v)| (k, v.unwrap_or(NONE))))
    }
}

impl<'de> Deserialize<'de> for NodeMapping {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        Ok(Self {
            entries: raw
                .into_iter()
                .map(|(k, v)| {
                    let v = (v != NONE).then_some(v);
                    (k, v)
                })
                .collect(),
        })
    }
}

/// Retrieves the `params.k` nearest reference concepts for every node and
/// asks the adjudicator which one, if any, names the same concept.
/// Unparsable adjudications map to nothing.
pub fn map_nodes(
    index: &EmbeddingIndex,
    provider: &dyn EmbeddingProvider,
    gateway: &Gateway,
    prompts: &PromptSet,
    nodes: &[String],
    params: &EvalParams,
    concurrency: usize,
) -> Result<NodeMapping, MappingError> {
    let mut vectors = Vec::with_capacity(nodes.len());
    for chunk in nodes.chunks(256) {
        vectors.extend(provider.embed(chunk)?);
    }
    if vectors.len() != nodes.len() {
        return Err(EmbedError::Provider(format!("{} vectors for {} nodes", vectors.len(), nodes.len())).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| MappingError::Pool(e.to_string()))?;
    let results: Vec<Result<Option<String>, MappingError>> = pool.install(|| {
        nodes
            .par_iter()
            .zip(vectors.par_iter())
            .map(|(node, v)| {
                let candidates: Vec<String> = index.nearest(v, params.k)?.into_iter().map(|(name, _)| name).collect();
                if candidates.is_empty() {
                    return Ok(None);
                }
                let prompt = prompts.nn_match(node, &candidates)?;
                match gateway.ask_validated(TemplateName::NnMatch, None, &prompt, |raw| {
                    parse_match(raw, &candidates)
                }) {
                    Ok(m) => Ok(m),
                    Err(e) if e.is_malformed() => {
                        warn!(node = %node, error = %e, "no usable match answer; mapping to none");
                        Ok(None)
                    }
                    Err(e) => Err(MappingError::Backend(e)),
                }
            })
            .collect()
    });
    let mut mapping = NodeMapping::new();
    for (node, r) in nodes.iter().zip(results) {
        mapping.insert(node, r?.as_deref());
    }
    info!(
        nodes = mapping.len(),
        mapped = mapping.mapped_count(),
        "node mapping done"
    );
    Ok(mapping)
}
