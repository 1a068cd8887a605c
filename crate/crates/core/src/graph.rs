//! Directed causal concept graphs.
//!
//! A [`ConceptGraph`] holds concept nodes and "causes" edges grown from a
//! single root concept. Node identity is case-insensitive after whitespace
//! normalization; the first-seen surface form is the one stored.

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("concept name is empty after trimming")]
    EmptyName,
    #[error("concept name {0:?} contains square brackets")]
    BracketInName(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("malformed graph document: {0}")]
    Malformed(String),
    #[error("duplicate node {0:?} in graph document")]
    DuplicateNode(String),
    #[error("duplicate edge {0:?} -> {1:?} in graph document")]
    DuplicateEdge(String, String),
    #[error("self-loop on {0:?} in graph document")]
    SelfLoop(String),
}

/// Which stage of generation produced an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expansion,
    Refinement,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Expansion => "expansion",
            Provenance::Refinement => "refinement",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode<'a> {
    pub name: &'a str,
    pub is_root: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalEdge<'a> {
    pub src: &'a str,
    pub dst: &'a str,
    pub provenance: Provenance,
}

/// Model identifier plus a snapshot of the parameters used to generate the
/// graph. `params` is free-form so that callers can record whatever they ran
/// with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    pub model: String,
    pub params: serde_json::Map<String, serde_json::Value>,
}

/// Trim, then collapse internal whitespace runs to one space.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Identity key: normalized and lower-cased.
pub fn name_key(raw: &str) -> String {
    normalize_name(raw).to_lowercase()
}

fn validate_name(raw: &str) -> Result<String, GraphError> {
    let name = normalize_name(raw);
    if name.is_empty() {
        return Err(GraphError::EmptyName);
    }
    if name.contains(['[', ']']) {
        return Err(GraphError::BracketInName(name));
    }
    Ok(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    root: String,
    // key -> stored name, in insertion order
    nodes: IndexMap<String, String>,
    // (src, dst) stored names, in insertion order
    edges: IndexMap<(String, String), Provenance>,
    metadata: GraphMetadata,
}

impl ConceptGraph {
    pub fn new(root: &str) -> Result<Self, GraphError> {
        let root = validate_name(root)?;
        let mut nodes = IndexMap::new();
        nodes.insert(name_key(&root), root.clone());
        Ok(Self {
            root,
            nodes,
            edges: IndexMap::new(),
            metadata: GraphMetadata::default(),
        })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn metadata(&self) -> &GraphMetadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut GraphMetadata {
        &mut self.metadata
    }

    pub fn set_metadata(&mut self, metadata: GraphMetadata) {
        self.metadata = metadata;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node names in insertion order.
    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.values().map(String::as_str)
    }

    pub fn nodes(&self) -> impl Iterator<Item = ConceptNode<'_>> {
        self.nodes.values().map(|n| ConceptNode {
            name: n,
            is_root: *n == self.root,
        })
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> impl Iterator<Item = CausalEdge<'_>> {
        self.edges.iter().map(|((s, d), p)| CausalEdge {
            src: s,
            dst: d,
            provenance: *p,
        })
    }

    /// Node names sorted lexicographically.
    pub fn sorted_node_names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.node_names().collect();
        v.sort_unstable();
        v
    }

    /// Edges sorted lexicographically by (src, dst).
    pub fn sorted_edges(&self) -> Vec<CausalEdge<'_>> {
        let mut v: Vec<_> = self.edges().collect();
        v.sort_unstable_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)));
        v
    }

    /// Stored form of `name`, if a node with the same identity exists.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        self.nodes.get(&name_key(name)).map(String::as_str)
    }

    pub fn contains_node(&self, name: &str) -> bool {
        self.resolve(name).is_some()
    }

    pub fn contains_edge(&self, src: &str, dst: &str) -> bool {
        match (self.resolve(src), self.resolve(dst)) {
            (Some(s), Some(d)) => self.edges.contains_key(&(s.to_string(), d.to_string())),
            _ => false,
        }
    }

    pub fn edge_provenance(&self, src: &str, dst: &str) -> Option<Provenance> {
        let s = self.resolve(src)?.to_string();
        let d = self.resolve(dst)?.to_string();
        self.edges.get(&(s, d)).copied()
    }

    /// Inserts `name` unless a node with the same identity exists, returning
    /// the stored name either way.
    pub fn add_node(&mut self, name: &str) -> Result<String, GraphError> {
        let name = validate_name(name)?;
        let key = name.to_lowercase();
        Ok(self.nodes.entry(key).or_insert(name).clone())
    }

    /// Inserts the edge if absent. Self-loops are dropped with a warning.
    pub fn add_edge(&mut self, src: &str, dst: &str, provenance: Provenance) -> Result<bool, GraphError> {
        let s = self
            .resolve(src)
            .ok_or_else(|| GraphError::UnknownNode(src.to_string()))?
            .to_string();
        let d = self
            .resolve(dst)
            .ok_or_else(|| GraphError::UnknownNode(dst.to_string()))?
            .to_string();
        if s == d {
            warn!(node = %s, "rejecting self-loop");
            return Ok(false);
        }
        match self.edges.entry((s, d)) {
            indexmap::map::Entry::Occupied(_) => Ok(false),
            indexmap::map::Entry::Vacant(v) => {
                v.insert(provenance);
                Ok(true)
            }
        }
    }

    /// `['a causes b', 'b causes c']` over edges in insertion order.
    pub fn format_edge_list(&self) -> String {
        let items: Vec<String> = self.edges().map(|e| format!("'{} causes {}'", e.src, e.dst)).collect();
        format!("[{}]", items.join(", "))
    }

    fn to_document(&self, sorted: bool) -> GraphDocument {
        let (nodes, edges): (Vec<String>, Vec<EdgeRecord>) = if sorted {
            (
                self.sorted_node_names().into_iter().map(str::to_string).collect(),
                self.sorted_edges().into_iter().map(EdgeRecord::from).collect(),
            )
        } else {
            (
                self.node_names().map(str::to_string).collect(),
                self.edges().map(EdgeRecord::from).collect(),
            )
        };
        GraphDocument {
            root: self.root.clone(),
            model: self.metadata.model.clone(),
            params: self.metadata.params.clone(),
            nodes,
            edges,
        }
    }

    fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        let mut seen = IndexSet::new();
        let mut graph = ConceptGraph::new(&doc.root)?;
        if normalize_name(&doc.root) != doc.root {
            return Err(GraphError::Malformed(format!(
                "root {:?} is not in canonical form",
                doc.root
            )));
        }
        for n in &doc.nodes {
            let stored = validate_name(n)?;
            if stored != *n {
                return Err(GraphError::Malformed(format!("node {n:?} is not in canonical form")));
            }
            if !seen.insert(stored.to_lowercase()) {
                return Err(GraphError::DuplicateNode(n.clone()));
            }
            if stored.to_lowercase() == graph.root.to_lowercase() {
                if stored != graph.root {
                    return Err(GraphError::Malformed(format!(
                        "node {n:?} differs from root {:?} only by case",
                        graph.root
                    )));
                }
                continue;
            }
            graph.add_node(&stored)?;
        }
        if !seen.contains(&graph.root.to_lowercase()) {
            return Err(GraphError::Malformed(format!(
                "root {:?} missing from node list",
                graph.root
            )));
        }
        for EdgeRecord(src, dst, prov) in doc.edges {
            let exact = |n: &str| graph.resolve(n).filter(|s| *s == n).is_some();
            if !exact(&src) {
                return Err(GraphError::UnknownNode(src));
            }
            if !exact(&dst) {
                return Err(GraphError::UnknownNode(dst));
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if !graph.add_edge(&src, &dst, prov)? {
                return Err(GraphError::DuplicateEdge(src, dst));
            }
        }
        graph.metadata = GraphMetadata {
            model: doc.model,
            params: doc.params,
        };
        Ok(graph)
    }

    /// Canonical JSON: nodes and edges sorted, pretty-printed, trailing
    /// newline. Byte-stable for equal graphs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document(true)).expect("graph document serializes");
        s.push('\n');
        s
    }

    /// Strict load: unknown fields, duplicates, dangling endpoints and
    /// self-loops are all errors.
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    /// JSON that keeps insertion order, used for resume state where the order
    /// of edges feeds back into prompts.
    pub(crate) fn to_ordered_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_document(false)).expect("graph document serializes")
    }

    pub(crate) fn from_ordered_value(value: serde_json::Value) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_value(value).map_err(|e| GraphError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    root: String,
    #[serde(default)]
    model: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
    nodes: Vec<String>,
    edges: Vec<EdgeRecord>,
}

/// `[src, dst, provenance]`; a two-element `[src, dst]` loads as an
/// expansion edge.
#[derive(Debug)]
struct EdgeRecord(String, String, Provenance);

impl From<CausalEdge<'_>> for EdgeRecord {
    fn from(e: CausalEdge<'_>) -> Self {
        EdgeRecord(e.src.to_string(), e.dst.to_string(), e.provenance)
    }
}

impl Serialize for EdgeRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (&self.0, &self.1, self.2).serialize(s)
    }
}

impl<'de> Deserialize<'de> for EdgeRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Full(String, String, Provenance),
            Bare(String, String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Full(s, t, p) => EdgeRecord(s, t, p),
            Raw::Bare(s, t) => EdgeRecord(s, t, Provenance::Expansion),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(root: &str, edges: &[(&str, &str)]) -> ConceptGraph {
        let mut g = ConceptGraph::new(root).unwrap();
        for (s, d) in edges {
            g.add_node(s).unwrap();
            g.add_node(d).unwrap();
            g.add_edge(s, d, Provenance::Expansion).unwrap();
        }
        g
    }

    #[test]
    fn add_node_into_empty_graph() {
        let mut g = ConceptGraph::new("Root").unwrap();
        assert_eq!(g.add_node("Diabetes Mellitus").unwrap(), "Diabetes Mellitus");
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn add_node_merges_case_variants() {
        let mut g = ConceptGraph::new("Root").unwrap();
        g.add_node("Diabetes Mellitus").unwrap();
        assert_eq!(g.add_node("diabetes   mellitus").unwrap(), "Diabetes Mellitus");
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn add_node_trims() {
        let mut g = ConceptGraph::new("Root").unwrap();
        assert_eq!(g.add_node("  Asthma  ").unwrap(), "Asthma");
    }

    #[test]
    fn add_node_rejects_empty_and_bracketed() {
        let mut g = ConceptGraph::new("Root").unwrap();
        assert_eq!(g.add_node("   "), Err(GraphError::EmptyName));
        assert!(matches!(g.add_node("[x]"), Err(GraphError::BracketInName(_))));
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn add_edge_is_idempotent() {
        let mut g = graph("A", &[]);
        g.add_node("B").unwrap();
        assert!(g.add_edge("A", "B", Provenance::Expansion).unwrap());
        assert!(!g.add_edge("A", "B", Provenance::Refinement).unwrap());
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edge_provenance("A", "B"), Some(Provenance::Expansion));
    }

    #[test]
    fn self_loops_are_rejected() {
        let mut g = graph("A", &[]);
        assert!(!g.add_edge("A", "a", Provenance::Expansion).unwrap());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn mutual_edges_are_kept() {
        let g = graph("A", &[("A", "B"), ("B", "A")]);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn add_edge_requires_nodes() {
        let mut g = graph("A", &[]);
        assert_eq!(
            g.add_edge("A", "Z", Provenance::Expansion),
            Err(GraphError::UnknownNode("Z".into()))
        );
    }

    #[test]
    fn edge_list_formatting() {
        assert_eq!(graph("A", &[]).format_edge_list(), "[]");
        assert_eq!(graph("A", &[("A", "B")]).format_edge_list(), "['A causes B']");
        assert_eq!(
            graph("A", &[("A", "B"), ("B", "C")]).format_edge_list(),
            "['A causes B', 'B causes C']"
        );
        // insertion order, not sorted
        assert_eq!(
            graph("A", &[("C", "A"), ("A", "B")]).format_edge_list(),
            "['C causes A', 'A causes B']"
        );
    }

    #[test]
    fn json_round_trip_and_layout() {
        let g = graph("A", &[("A", "B")]);
        let json = g.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["nodes"], serde_json::json!(["A", "B"]));
        assert_eq!(v["edges"], serde_json::json!([["A", "B", "expansion"]]));
        assert_eq!(ConceptGraph::from_json(&json).unwrap(), g);
    }

    #[test]
    fn json_accepts_bare_edge_pairs() {
        let g = ConceptGraph::from_json(r#"{"root":"A","nodes":["A","B"],"edges":[["A","B"]]}"#).unwrap();
        assert_eq!(g.edge_provenance("A", "B"), Some(Provenance::Expansion));
    }

    #[test]
    fn json_rejects_dangling_edge() {
        let err = ConceptGraph::from_json(r#"{"root":"A","nodes":["A"],"edges":[["A","B"]]}"#).unwrap_err();
        assert_eq!(err, GraphError::UnknownNode("B".into()));
    }

    #[test]
    fn json_rejects_duplicate_edges() {
        let err =
            ConceptGraph::from_json(r#"{"root":"A","nodes":["A","B"],"edges":[["A","B"],["A","B","refinement"]]}"#)
                .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateEdge(..)));
    }

    #[test]
    fn json_rejects_unknown_fields_and_missing_root() {
        assert!(ConceptGraph::from_json(r#"{"root":"A","nodes":["A"],"edges":[],"x":1}"#).is_err());
        assert!(ConceptGraph::from_json(r#"{"root":"A","nodes":["B"],"edges":[]}"#).is_err());
        assert!(ConceptGraph::from_json(r#"{"root":"A","nodes":["A","a"],"edges":[]}"#).is_err());
    }

    #[test]
    fn json_is_independent_of_insertion_order() {
        let a = graph("A", &[("A", "B"), ("C", "A")]);
        let b = graph("A", &[("C", "A"), ("A", "B")]);
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }
}
