//! Causal concept graphs generated by a chat LLM, and their evaluation
//! against a reference knowledge graph.

pub mod builder;
pub mod embed;
pub mod eval;
pub mod export;
pub mod gateway;
pub mod graph;
pub mod mapping;
pub mod metrics;
pub mod parse;
pub mod prompts;
pub mod review;
pub mod truth;

pub use builder::{BuildError, Direction, GenerationParams, GraphBuilder};
pub use eval::{evaluate, EdgeOutcome, EvalParams, EvalReport};
pub use gateway::{ChatBackend, Gateway, GatewayError, SamplingParams};
pub use graph::{ConceptGraph, GraphError, Provenance};
pub use mapping::{map_nodes, NodeMapping};
pub use prompts::{PromptSet, TemplateName};
pub use truth::GroundTruthGraph;
