//! Graph generation: breadth-first node expansion from a root concept in
//! both causal directions, then pairwise edge refinement over the expanded
//! node set.
//!
//! Queries for one expansion level (or one refinement chunk) may be in
//! flight concurrently, but every prompt in a level is rendered from the
//! graph as it stood when the level began and answers are applied in
//! frontier order. Output therefore does not depend on the concurrency
//! setting.

use crate::gateway::{Gateway, GatewayError};
use crate::graph::{ConceptGraph, GraphError, Provenance};
use crate::parse::{parse_concepts, parse_verdict, Verdict};
use crate::prompts::{PromptSet, TemplateError, TemplateName};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;
use tracing::{info, warn};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("backend failure, partial graph kept ({nodes} nodes, {edges} edges): {source}")]
    Backend {
        #[source]
        source: GatewayError,
        nodes: usize,
        edges: usize,
    },
    #[error("resume file {path}: {message}")]
    Resume { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    /// Concepts accepted from one expansion answer.
    pub n_max: usize,
    /// Nodes at depth < `depth_max` are expanded; the root is depth 0.
    pub depth_max: usize,
    /// Also ask about ordered pairs that already have an edge.
    pub query_existing_edges: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_max: 3,
            depth_max: 2,
            query_existing_edges: false,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.n_max == 0 {
            return Err(BuildError::Params("n_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Expansion direction, named after the node being expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Find concepts caused by the node; edges point node -> child.
    #[serde(rename = "caused_by")]
    Outward,
    /// Find concepts causing the node; edges point child -> node.
    #[serde(rename = "causing")]
    Inward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierItem {
    pub node: String,
    pub depth: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
enum Stage {
    Expansion { frontier: Vec<FrontierItem> },
    Refinement { done: String },
    Finished,
}

/// On-disk checkpoint: the graph with edges in insertion order, plus where
/// generation stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    root: String,
    model: String,
    params: GenerationParams,
    graph: serde_json::Value,
    depths: IndexMap<String, usize>,
    #[serde(flatten)]
    stage: Stage,
}

fn pack_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    hex::encode(bytes)
}

fn unpack_bits(hex_str: &str, len: usize) -> Option<Vec<bool>> {
    let bytes = hex::decode(hex_str).ok()?;
    if bytes.len() != len.div_ceil(8) {
        return None;
    }
    Some((0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
}

/// All ordered pairs of distinct nodes, sorted lexicographically.
pub fn ordered_pairs(graph: &ConceptGraph) -> Vec<(String, String)> {
    let names = graph.sorted_node_names();
    let mut pairs = Vec::with_capacity(names.len() * names.len().saturating_sub(1));
    for v in &names {
        for u in &names {
            if v != u {
                pairs.push((v.to_string(), u.to_string()));
            }
        }
    }
    pairs
}

pub struct GraphBuilder {
    gateway: Gateway,
    prompts: PromptSet,
    params: GenerationParams,
    concurrency: usize,
    resume_path: Option<PathBuf>,
}

impl GraphBuilder {
    pub fn new(gateway: Gateway, params: GenerationParams) -> Self {
        Self {
            gateway,
            prompts: PromptSet::default(),
            params,
            concurrency: 1,
            resume_path: None,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Maximum queries in flight.
    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    /// Checkpoint file read on start and rewritten as generation progresses.
    pub fn with_resume_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.resume_path = Some(path.into());
        self
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    fn map_ordered<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.concurrency <= 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.concurrency)
            .build()
            .expect("thread pool");
        pool.install(|| items.par_iter().map(f).collect())
    }

    fn expansion_prompt(
        &self,
        edges: &str,
        concept: &str,
        direction: Direction,
    ) -> Result<(TemplateName, String), TemplateError> {
        let n = self.params.n_max;
        Ok(match direction {
            Direction::Outward => (
                TemplateName::ExpandCausing,
                self.prompts.expand_causing(edges, concept, n)?,
            ),
            Direction::Inward => (
                TemplateName::ExpandCausedBy,
                self.prompts.expand_caused_by(edges, concept, n)?,
            ),
        })
    }

    /// Asks for concepts in one direction. A reply that stays unparsable
    /// after every retry counts as "no concepts".
    fn query_expansion(&self, template: TemplateName, prompt: &str) -> Result<Vec<String>, GatewayError> {
        let system = self.prompts.system();
        let n_max = self.params.n_max;
        match self
            .gateway
            .ask_validated(template, Some(&system), prompt, |raw| parse_concepts(raw, n_max))
        {
            Ok(parsed) => Ok(parsed.concepts),
            Err(e) if e.is_malformed() => {
                warn!(%template, error = %e, "treating unparsable expansion answer as empty");
                Ok(Vec::new())
            }
            Err(e) => Err(e),
        }
    }

    fn apply_expansion(
        graph: &mut ConceptGraph,
        concept: &str,
        direction: Direction,
        found: &[String],
    ) -> Result<Vec<String>, GraphError> {
        let mut created = Vec::new();
        for name in found {
            let existed = graph.contains_node(name);
            let stored = graph.add_node(name)?;
            match direction {
                Direction::Outward => graph.add_edge(concept, &stored, Provenance::Expansion)?,
                Direction::Inward => graph.add_edge(&stored, concept, Provenance::Expansion)?,
            };
            if !existed {
                created.push(stored);
            }
        }
        Ok(created)
    }

    fn expand(&self, graph: &mut ConceptGraph, concept: &str, direction: Direction) -> Result<Vec<String>, BuildError> {
        let concept = graph
            .resolve(concept)
            .ok_or_else(|| GraphError::UnknownNode(concept.to_string()))?
            .to_string();
        let (template, prompt) = self.expansion_prompt(&graph.format_edge_list(), &concept, direction)?;
        let found = self
            .query_expansion(template, &prompt)
            .map_err(|source| BuildError::Backend {
                source,
                nodes: graph.node_count(),
                edges: graph.edge_count(),
            })?;
        Ok(Self::apply_expansion(graph, &concept, direction, &found)?)
    }

    /// Adds concepts caused by `concept` with edges `concept -> child`;
    /// returns only the nodes that were new.
    pub fn expand_out(&self, graph: &mut ConceptGraph, concept: &str) -> Result<Vec<String>, BuildError> {
        self.expand(graph, concept, Direction::Outward)
    }

    /// Adds concepts causing `concept` with edges `child -> concept`.
    pub fn expand_in(&self, graph: &mut ConceptGraph, concept: &str) -> Result<Vec<String>, BuildError> {
        self.expand(graph, concept, Direction::Inward)
    }

    fn new_graph(&self, root: &str) -> Result<ConceptGraph, BuildError> {
        let mut graph = ConceptGraph::new(root)?;
        let meta = graph.metadata_mut();
        meta.model = self.gateway.model_id().to_string();
        let sampling = self.gateway.params();
        let params = serde_json::json!({
            "n_max": self.params.n_max,
            "depth_max": self.params.depth_max,
            "query_existing_edges": self.params.query_existing_edges,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_retries": sampling.max_retries,
        });
        meta.params = params.as_object().cloned().unwrap_or_default();
        Ok(graph)
    }

    fn seed_frontier(root: &str) -> Vec<FrontierItem> {
        [Direction::Outward, Direction::Inward]
            .into_iter()
            .map(|direction| FrontierItem {
                node: root.to_string(),
                depth: 0,
                direction,
            })
            .collect()
    }

    /// Node expansion only. Returns the graph and the depth at which every
    /// node was discovered.
    pub fn explore_traced(&self, root: &str) -> Result<(ConceptGraph, IndexMap<String, usize>), BuildError> {
        self.params.validate()?;
        let graph = self.new_graph(root)?;
        let mut depths = IndexMap::new();
        depths.insert(graph.root().to_string(), 0);
        let frontier = Self::seed_frontier(graph.root());
        self.run_expansion(graph, depths, frontier, None)
    }

    pub fn explore(&self, root: &str) -> Result<ConceptGraph, BuildError> {
        Ok(self.explore_traced(root)?.0)
    }

    fn run_expansion(
        &self,
        mut graph: ConceptGraph,
        mut depths: IndexMap<String, usize>,
        mut frontier: Vec<FrontierItem>,
        resume: Option<&Path>,
    ) -> Result<(ConceptGraph, IndexMap<String, usize>), BuildError> {
        frontier.retain(|item| item.depth < self.params.depth_max);
        while !frontier.is_empty() {
            if let Some(path) = resume {
                self.save(
                    path,
                    &graph,
                    &depths,
                    Stage::Expansion {
                        frontier: frontier.clone(),
                    },
                )?;
            }
            let edges = graph.format_edge_list();
            let prompts = frontier
                .iter()
                .map(|item| self.expansion_prompt(&edges, &item.node, item.direction))
                .collect::<Result<Vec<_>, _>>()?;
            let answers = self.map_ordered(&prompts, |(template, prompt)| self.query_expansion(*template, prompt));
            let answers = answers
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| BuildError::Backend {
                    source,
                    nodes: graph.node_count(),
                    edges: graph.edge_count(),
                })?;

            let mut next = Vec::new();
            for (item, found) in frontier.iter().zip(&answers) {
                let created = Self::apply_expansion(&mut graph, &item.node, item.direction, found)?;
                for node in created {
                    let depth = item.depth + 1;
                    depths.insert(node.clone(), depth);
                    if depth < self.params.depth_max {
                        for direction in [Direction::Outward, Direction::Inward] {
                            next.push(FrontierItem {
                                node: node.clone(),
                                depth,
                                direction,
                            });
                        }
                    }
                }
            }
            info!(
                items = frontier.len(),
                nodes = graph.node_count(),
                edges = graph.edge_count(),
                "expansion level done"
            );
            frontier = next;
        }
        Ok((graph, depths))
    }

    /// Pairwise refinement: asks, for every ordered pair of distinct nodes
    /// in lexicographic order, whether the first directly causes the second.
    /// Pairs that already have an edge are skipped unless
    /// `query_existing_edges` is set. The node set never changes.
    pub fn refine_edges(&self, graph: ConceptGraph) -> Result<ConceptGraph, BuildError> {
        let pairs = ordered_pairs(&graph);
        let done = vec![false; pairs.len()];
        self.run_refinement(graph, &IndexMap::new(), done, None)
    }

    fn run_refinement(
        &self,
        mut graph: ConceptGraph,
        depths: &IndexMap<String, usize>,
        mut done: Vec<bool>,
        resume: Option<&Path>,
    ) -> Result<ConceptGraph, BuildError> {
        let pairs = ordered_pairs(&graph);
        let todo: Vec<usize> = (0..pairs.len())
            .filter(|&i| !done[i])
            .filter(|&i| {
                let (v, u) = &pairs[i];
                // on resume, edges added by refinement belong to pairs already marked done
                self.params.query_existing_edges || !graph.contains_edge(v, u)
            })
            .collect();
        let system = self.prompts.system();
        let chunk = (self.concurrency * 16).max(16);
        for batch in todo.chunks(chunk) {
            if let Some(path) = resume {
                self.save(path, &graph, depths, Stage::Refinement { done: pack_bits(&done) })?;
            }
            let prompts = batch
                .iter()
                .map(|&i| self.prompts.edge_check(&pairs[i].0, &pairs[i].1))
                .collect::<Result<Vec<_>, _>>()?;
            let verdicts = self.map_ordered(&prompts, |prompt| {
                match self
                    .gateway
                    .ask_validated(TemplateName::EdgeCheck, Some(&system), prompt, parse_verdict)
                {
                    Ok(v) => Ok(v),
                    Err(e) if e.is_malformed() => {
                        warn!(error = %e, "treating unparsable edge check as no");
                        Ok(Verdict::No)
                    }
                    Err(e) => Err(e),
                }
            });
            let verdicts =
                verdicts
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| BuildError::Backend {
                        source,
                        nodes: graph.node_count(),
                        edges: graph.edge_count(),
                    })?;
            for (&i, verdict) in batch.iter().zip(verdicts) {
                if verdict.is_yes() {
                    graph.add_edge(&pairs[i].0, &pairs[i].1, Provenance::Refinement)?;
                }
                done[i] = true;
            }
        }
        Ok(graph)
    }

    /// Expansion followed by refinement. With a resume file configured,
    /// progress is checkpointed and an existing checkpoint for the same
    /// root, model and parameters is picked up where it stopped.
    pub fn generate(&self, root: &str) -> Result<ConceptGraph, BuildError> {
        self.params.validate()?;
        let Some(path) = self.resume_path.as_deref() else {
            let graph = self.explore(root)?;
            return self.refine_edges(graph);
        };
        let (graph, depths, stage) = match self.load(path, root)? {
            Some(state) => state,
            None => {
                let graph = self.new_graph(root)?;
                let mut depths = IndexMap::new();
                depths.insert(graph.root().to_string(), 0);
                let frontier = Self::seed_frontier(graph.root());
                (graph, depths, Stage::Expansion { frontier })
            }
        };
        let (graph, depths, done) = match stage {
            Stage::Finished => return Ok(graph),
            Stage::Expansion { frontier } => {
                let (graph, depths) = self.run_expansion(graph, depths, frontier, Some(path))?;
                let n = ordered_pairs(&graph).len();
                (graph, depths, vec![false; n])
            }
            Stage::Refinement { done } => {
                let n = ordered_pairs(&graph).len();
                let done = unpack_bits(&done, n).ok_or_else(|| BuildError::Resume {
                    path: path.display().to_string(),
                    message: "pair bitmap does not match node count".into(),
                })?;
                (graph, depths, done)
            }
        };
        let graph = self.run_refinement(graph, &depths, done, Some(path))?;
        self.save(path, &graph, &depths, Stage::Finished)?;
        Ok(graph)
    }

    fn save(
        &self,
        path: &Path,
        graph: &ConceptGraph,
        depths: &IndexMap<String, usize>,
        stage: Stage,
    ) -> Result<(), BuildError> {
        let state = ResumeState {
            root: graph.root().to_string(),
            model: self.gateway.model_id().to_string(),
            params: self.params,
            graph: graph.to_ordered_value(),
            depths: depths.clone(),
            stage,
        };
        let err = |e: std::io::Error| BuildError::Resume {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(err)?;
        }
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string_pretty(&state).expect("resume state serializes");
        std::fs::write(&tmp, text).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    #[allow(clippy::type_complexity)]
    fn load(
        &self,
        path: &Path,
        root: &str,
    ) -> Result<Option<(ConceptGraph, IndexMap<String, usize>, Stage)>, BuildError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(BuildError::Resume {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        let bad = |message: String| BuildError::Resume {
            path: path.display().to_string(),
            message,
        };
        let state: ResumeState = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if crate::graph::name_key(&state.root) != crate::graph::name_key(root)
            || state.model != self.gateway.model_id()
            || state.params != self.params
        {
            warn!(path = %path.display(), "resume file belongs to a different run; starting over");
            return Ok(None);
        }
        let graph = ConceptGraph::from_ordered_value(state.graph).map_err(|e| bad(e.to_string()))?;
        info!(path = %path.display(), nodes = graph.node_count(), "resuming");
        Ok(Some((graph, state.depths, state.stage)))
    }
}
