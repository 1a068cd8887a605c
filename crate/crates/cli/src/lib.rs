//! Command-line orchestration: generate, evaluate, map-nodes, metrics,
//! review and export, composed through files.

pub mod commands;
pub mod config;

use causalkg::GatewayError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Backend(GatewayError),
    /// Some outputs (or checkpoints) were written before a backend failure.
    #[error("partial run: {0}")]
    Partial(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// 0 success, 1 validation, 2 backend/transport, 3 partial run persisted.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) | RunError::Io { .. } => 1,
            RunError::Backend(_) => 2,
            RunError::Partial(_) => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// File-system friendly name: lowercase ASCII alphanumerics, everything else
/// collapsed to single dashes.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_end_matches('-');
    if trimmed.is_empty() {
        "unnamed".into()
    } else {
        trimmed.to_string()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "causalkg",
    version,
    about = "Causal concept graphs from chat LLMs, and their evaluation"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this configured backend.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Response cache directory (overrides the config).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Use a scripted backend loaded from this fixture file.
    #[arg(long, global = true, value_name = "FILE")]
    pub seed_fixtures: Option<PathBuf>,
    /// Log filter, e.g. `info` or `causalkg=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build one graph per (backend, concept).
    Generate(GenerateArgs),
    /// Score graphs against a reference graph.
    Evaluate(EvaluateArgs),
    /// Map generated nodes onto reference concepts.
    MapNodes(MapArgs),
    /// Structural attributes per graph.
    Metrics(MetricsArgs),
    /// Aggregate reviewer scores.
    Review(ReviewArgs),
    /// Convert a graph to DOT, GraphML or an edge CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Root concepts; replaces the configured list.
    #[arg(long = "concept")]
    pub concepts: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Queries in flight per concept.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Concepts generated at the same time.
    #[arg(long)]
    pub parallel_concepts: Option<usize>,
    /// Ask about ordered pairs that already have an edge too.
    #[arg(long)]
    pub query_existing_edges: bool,
}

#[derive(Debug, Args, Clone)]
pub struct TruthArgs {
    /// Reference concept table (id, name).
    #[arg(long)]
    pub truth_concepts: PathBuf,
    /// Reference relation table (src, dst, relation).
    #[arg(long)]
    pub truth_edges: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    /// Node mapping JSON.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Map nodes missing from the mapping file first, and save it.
    #[arg(long)]
    pub map_first: bool,
    /// Directory for per-graph reports and the summary table.
    #[arg(long)]
    pub out: PathBuf,
    /// Population SD in the summary (sample SD otherwise).
    #[arg(long)]
    pub population_sd: bool,
    /// Graph JSON files or directories of them.
    #[arg(required = true)]
    pub graphs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub truth: TruthArgs,
    /// Mapping JSON to extend (created when absent).
    #[arg(long)]
    pub mapping: PathBuf,
    /// Re-map nodes that already have an entry.
    #[arg(long)]
    pub remap: bool,
    #[arg(required = true)]
    pub graphs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Evaluation reports supplying precision and recall.
    #[arg(long = "report")]
    pub reports: Vec<PathBuf>,
    /// Sort rows by this column, descending.
    #[arg(long)]
    pub sort_by: Option<SortColumn>,
    #[arg(long)]
    pub cycle_cap: Option<u64>,
    #[arg(long)]
    pub population_sd: bool,
    /// Attribute table CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-model Mean/Min/Max/SD CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(required = true)]
    pub graphs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SortColumn {
    Precision,
    Recall,
    Density,
    Reciprocity,
    Nodes,
    Edges,
    Cycles,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// `condition,model,reviewer_id,accuracy,comprehensiveness` CSV.
    pub scores: PathBuf,
    /// Reject conditions outside the configured concepts and models outside
    /// the configured backends.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Dot,
    Graphml,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub graph: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), RunError> {
    let mut cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = Some(dir.clone());
    }
    let ctx = commands::Context {
        cfg,
        backend: cli.backend,
        seed_fixtures: cli.seed_fixtures,
    };
    match cli.command {
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::MapNodes(a) => commands::map_nodes(&ctx, a),
        Command::Metrics(a) => commands::metrics(&ctx, a),
        Command::Review(a) => commands::review(&ctx, a),
        Command::Export(a) => commands::export(a),
    }
}
