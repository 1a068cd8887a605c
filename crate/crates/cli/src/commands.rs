use crate::config::{build_backend, build_embedding, load_fixtures, RunConfig};
use crate::{
    slug, EvaluateArgs, ExportArgs, ExportFormat, GenerateArgs, MapArgs, MetricsArgs, ReviewArgs, RunError, SortColumn,
    TruthArgs,
};
use causalkg::builder::BuildError;
use causalkg::embed::EmbeddingIndex;
use causalkg::gateway::ResponseCache;
use causalkg::metrics::{attributes_csv, summarize, summarize_by_model, GraphAttributes, SdConvention, SummaryStats};
use causalkg::review::{aggregate, load_reviews, Roster, EXPECTED_REVIEWERS};
use causalkg::{
    export as exporters, ChatBackend, ConceptGraph, EvalReport, Gateway, GraphBuilder, GroundTruthGraph, NodeMapping,
    PromptSet,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use tracing::{info, warn};

type NamedBackend = (String, Arc<dyn ChatBackend>);

pub struct Context {
    pub cfg: RunConfig,
    pub backend: Option<String>,
    pub seed_fixtures: Option<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| RunError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))
}

impl Context {
    fn prompts(&self) -> Result<PromptSet, RunError> {
        match &self.cfg.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir).map_err(|e| RunError::Validation(e.to_string())),
            None => Ok(PromptSet::default()),
        }
    }

    /// Backends to generate with, as `(name, backend)`.
    fn run_backends(&self) -> Result<Vec<NamedBackend>, RunError> {
        if let Some(path) = &self.seed_fixtures {
            let b = load_fixtures(path)?;
            let name = self.backend.clone().unwrap_or_else(|| b.model_id().to_string());
            return Ok(vec![(name, Arc::new(b))]);
        }
        self.cfg
            .backend_names(self.backend.as_deref())?
            .into_iter()
            .map(|name| Ok((name.clone(), build_backend(&self.cfg.backends[&name])?)))
            .collect()
    }

    /// The adjudicator for node mapping: scripted fixtures first, then the
    /// configured mapping backend, then `--backend`, then a sole backend.
    fn mapping_backend(&self) -> Result<Arc<dyn ChatBackend>, RunError> {
        if let Some(path) = &self.seed_fixtures {
            return Ok(Arc::new(load_fixtures(path)?));
        }
        let name = match (&self.cfg.mapping_backend, &self.backend) {
            (Some(m), _) => m.clone(),
            (None, Some(b)) => self.cfg.backend_names(Some(b))?.remove(0),
            (None, None) if self.cfg.backends.len() == 1 => {
                self.cfg.backends.keys().next().cloned().unwrap_or_default()
            }
            _ => {
                return Err(RunError::Validation(
                    "node mapping needs a backend: set mapping_backend, pass --backend or --seed-fixtures".into(),
                ))
            }
        };
        build_backend(&self.cfg.backends[&name])
    }

    fn gateway(&self, backend: Arc<dyn ChatBackend>) -> Result<Gateway, RunError> {
        let gw = Gateway::new(backend, self.cfg.sampling);
        match &self.cfg.cache_dir {
            Some(dir) => {
                let cache = ResponseCache::on_disk(dir).map_err(|e| RunError::io(dir, e))?;
                Ok(gw.with_cache(Arc::new(cache)))
            }
            None => Ok(gw),
        }
    }
}

#[derive(Serialize)]
struct ManifestGraph {
    concept: String,
    file: String,
    sha256: String,
    nodes: usize,
    edges: usize,
}

#[derive(Serialize)]
struct ManifestFailure {
    concept: String,
    error: String,
}

#[derive(Serialize)]
struct Manifest {
    backend: String,
    model: String,
    generation: causalkg::GenerationParams,
    sampling: causalkg::SamplingParams,
    templates: BTreeMap<String, String>,
    graphs: Vec<ManifestGraph>,
    failed: Vec<ManifestFailure>,
}

pub fn generate(ctx: &Context, args: GenerateArgs) -> Result<(), RunError> {
    let concepts = if args.concepts.is_empty() {
        ctx.cfg.concepts.clone()
    } else {
        args.concepts
    };
    if concepts.is_empty() {
        return Err(RunError::Validation(
            "no concepts to generate; set `concepts` or pass --concept".into(),
        ));
    }
    let mut seen = BTreeMap::new();
    for c in &concepts {
        if let Some(prev) = seen.insert(slug(c), c) {
            return Err(RunError::Validation(format!(
                "concepts {prev:?} and {c:?} share the file name {}",
                slug(c)
            )));
        }
    }
    let mut params = ctx.cfg.generation;
    params.query_existing_edges |= args.query_existing_edges;
    params.validate().map_err(|e| RunError::Validation(e.to_string()))?;
    let concurrency = args.concurrency.unwrap_or(ctx.cfg.concurrency).max(1);
    let parallel = args.parallel_concepts.unwrap_or(ctx.cfg.parallel_concepts).max(1);
    let out = args.output_dir.unwrap_or_else(|| ctx.cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| RunError::io(&out, e))?;
    let prompts = ctx.prompts()?;
    let backends = ctx.run_backends()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| RunError::Validation(e.to_string()))?;

    let mut partial = Vec::new();
    let mut invalid = Vec::new();
    for (name, backend) in backends {
        let gateway = ctx.gateway(backend)?;
        let dir = out.join(slug(&name));
        let resume_dir = dir.join(".resume");
        std::fs::create_dir_all(&resume_dir).map_err(|e| RunError::io(&resume_dir, e))?;
        let results: Vec<Result<ManifestGraph, BuildError>> = pool.install(|| {
            concepts
                .par_iter()
                .map(|concept| {
                    let file = format!("{}.json", slug(concept));
                    let resume = resume_dir.join(&file);
                    let graph = GraphBuilder::new(gateway.clone(), params)
                        .with_prompts(prompts.clone())
                        .with_concurrency(concurrency)
                        .with_resume_file(&resume)
                        .generate(concept)?;
                    let json = graph.to_json();
                    let path = dir.join(&file);
                    std::fs::write(&path, &json).map_err(|e| BuildError::Resume {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                    if let Err(e) = std::fs::remove_file(&resume) {
                        warn!(path = %resume.display(), error = %e, "could not remove finished checkpoint");
                    }
                    info!(backend = %name, concept = %concept, nodes = graph.node_count(), edges = graph.edge_count(), "graph written");
                    Ok(ManifestGraph {
                        concept: concept.clone(),
                        file,
                        sha256: sha256_hex(json.as_bytes()),
                        nodes: graph.node_count(),
                        edges: graph.edge_count(),
                    })
                })
                .collect()
        });
        let mut manifest = Manifest {
            backend: name.clone(),
            model: gateway.model_id().to_string(),
            generation: params,
            sampling: *gateway.params(),
            templates: prompts.digests(),
            graphs: Vec::new(),
            failed: Vec::new(),
        };
        for (concept, r) in concepts.iter().zip(results) {
            match r {
                Ok(g) => manifest.graphs.push(g),
                Err(e) => {
                    warn!(backend = %name, concept = %concept, error = %e, "generation failed");
                    let msg = format!("{name}/{concept}: {e}");
                    if matches!(e, BuildError::Backend { .. }) {
                        partial.push(msg);
                    } else {
                        invalid.push(msg);
                    }
                    manifest.failed.push(ManifestFailure {
                        concept: concept.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let stats = gateway.stats();
        info!(
            backend = %name,
            requests = stats.requests(),
            cache_hits = stats.cache_hits(),
            "backend done"
        );
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_file(&dir.join("manifest.json"), &text)?;
        if manifest.failed.is_empty() {
            // fails harmlessly when checkpoints are left over
            let _ = std::fs::remove_dir(&resume_dir);
        }
    }
    if !invalid.is_empty() {
        return Err(RunError::Validation(invalid.join("\n")));
    }
    if !partial.is_empty() {
        return Err(RunError::Partial(format!(
            "{} graph(s) failed; checkpoints kept under .resume/, rerun to continue:\n{}",
            partial.len(),
            partial.join("\n")
        )));
    }
    Ok(())
}

/// Graph JSON files named directly or found (non-recursively) in the given
/// directories, skipping manifests and reports.
pub fn graph_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, RunError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(p).map_err(|e| RunError::io(p, e))? {
                let path = entry.map_err(|e| RunError::io(p, e))?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if path.is_file() && name.ends_with(".json") && name != "manifest.json" && !name.ends_with(".eval.json")
                {
                    found.push(path);
                }
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(RunError::Validation("no graph files given".into()));
    }
    Ok(out)
}

fn load_graphs(paths: &[PathBuf]) -> Result<Vec<(PathBuf, ConceptGraph)>, RunError> {
    graph_files(paths)?
        .into_iter()
        .map(|p| {
            let g = ConceptGraph::from_json(&read_file(&p)?)
                .map_err(|e| RunError::Validation(format!("{}: {e}", p.display())))?;
            Ok((p, g))
        })
        .collect()
}

fn load_truth(t: &TruthArgs) -> Result<GroundTruthGraph, RunError> {
    GroundTruthGraph::load(&t.truth_concepts, &t.truth_edges).map_err(|e| RunError::Validation(e.to_string()))
}

fn load_mapping(path: &Path, must_exist: bool) -> Result<NodeMapping, RunError> {
    if !path.exists() && !must_exist {
        return Ok(NodeMapping::new());
    }
    NodeMapping::from_json(&read_file(path)?).map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))
}

/// Maps `nodes` and merges the answers into `mapping`.
fn extend_mapping(
    ctx: &Context,
    truth: &GroundTruthGraph,
    mapping: &mut NodeMapping,
    nodes: &[String],
) -> Result<(), RunError> {
    if nodes.is_empty() {
        return Ok(());
    }
    let provider = build_embedding(&ctx.cfg.embedding)?;
    let index = EmbeddingIndex::build(provider.as_ref(), truth.names())
        .map_err(|e| RunError::Validation(format!("embedding reference concepts: {e}")))?;
    let gateway = ctx.gateway(ctx.mapping_backend()?)?;
    let found = causalkg::map_nodes(
        &index,
        provider.as_ref(),
        &gateway,
        &ctx.prompts()?,
        nodes,
        &ctx.cfg.evaluation,
        ctx.cfg.concurrency,
    )
    .map_err(|e| match e {
        causalkg::mapping::MappingError::Backend(g) => RunError::Backend(g),
        other => RunError::Validation(other.to_string()),
    })?;
    for (node, target) in found.iter() {
        mapping.insert(node, target);
    }
    Ok(())
}

fn all_nodes(graphs: &[(PathBuf, ConceptGraph)]) -> Vec<String> {
    let set: BTreeSet<String> = graphs
        .iter()
        .flat_map(|(_, g)| g.node_names().map(str::to_string))
        .collect();
    set.into_iter().collect()
}

fn missing_nodes(graphs: &[(PathBuf, ConceptGraph)], mapping: &NodeMapping) -> Vec<String> {
    let set: BTreeSet<String> = graphs.iter().flat_map(|(_, g)| mapping.missing_nodes(g)).collect();
    set.into_iter().collect()
}

pub fn map_nodes(ctx: &Context, args: MapArgs) -> Result<(), RunError> {
    let truth = load_truth(&args.truth)?;
    let graphs = load_graphs(&args.graphs)?;
    let mut mapping = load_mapping(&args.mapping, false)?;
    let todo = if args.remap {
        all_nodes(&graphs)
    } else {
        missing_nodes(&graphs, &mapping)
    };
    extend_mapping(ctx, &truth, &mut mapping, &todo)?;
    write_file(&args.mapping, &mapping.to_json())?;
    println!(
        "mapped {} node(s); {} of {} entries have a reference concept",
        todo.len(),
        mapping.mapped_count(),
        mapping.len()
    );
    Ok(())
}

fn fmt_stats(s: &SummaryStats) -> [String; 5] {
    [
        s.n.to_string(),
        format!("{:.4}", s.mean),
        format!("{:.4}", s.min),
        format!("{:.4}", s.max),
        format!("{:.4}", s.sd),
    ]
}

/// Per-model Mean/Min/Max/SD of precision and recall.
pub fn eval_summary_csv(reports: &[EvalReport], sd: SdConvention) -> String {
    let mut by_model: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_model.entry(r.model.as_str()).or_default().push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "metric", "n", "mean", "min", "max", "sd"])
        .expect("in-memory write");
    for (model, rs) in by_model {
        for (metric, values) in [
            ("precision", rs.iter().map(|r| r.precision).collect::<Vec<_>>()),
            ("recall", rs.iter().map(|r| r.recall).collect()),
        ] {
            if let Ok(s) = summarize(&values, sd) {
                let mut row = vec![model.to_string(), metric.to_string()];
                row.extend(fmt_stats(&s));
                w.write_record(&row).expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn sd_of(population: bool, cfg: SdConvention) -> SdConvention {
    if population {
        SdConvention::Population
    } else {
        cfg
    }
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> Result<(), RunError> {
    let truth = load_truth(&args.truth)?;
    let graphs = load_graphs(&args.graphs)?;
    let mut mapping = load_mapping(&args.mapping, !args.map_first)?;
    let missing = missing_nodes(&graphs, &mapping);
    if !missing.is_empty() {
        if !args.map_first {
            return Err(RunError::Validation(format!(
                "mapping {} has no entry for {} node(s) (rerun with --map-first):\n  {}",
                args.mapping.display(),
                missing.len(),
                missing.join("\n  ")
            )));
        }
        extend_mapping(ctx, &truth, &mut mapping, &missing)?;
        write_file(&args.mapping, &mapping.to_json())?;
    }
    let mut reports = Vec::with_capacity(graphs.len());
    for (path, g) in &graphs {
        let report = causalkg::evaluate(g, &truth, &mapping, &ctx.cfg.evaluation)
            .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
        let base = args
            .out
            .join(slug(if report.model.is_empty() {
                "unknown"
            } else {
                &report.model
            }))
            .join(slug(&report.root));
        write_file(&base.with_extension("eval.json"), &report.to_json())?;
        write_file(&base.with_extension("eval.txt"), &report.to_table())?;
        reports.push(report);
    }
    let summary = eval_summary_csv(&reports, sd_of(args.population_sd, ctx.cfg.metrics.sd));
    write_file(&args.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn sort_value(r: &GraphAttributes, col: SortColumn) -> f64 {
    match col {
        SortColumn::Precision => r.precision.unwrap_or(f64::NEG_INFINITY),
        SortColumn::Recall => r.recall.unwrap_or(f64::NEG_INFINITY),
        SortColumn::Density => r.density,
        SortColumn::Reciprocity => r.reciprocity,
        SortColumn::Nodes => r.nodes as f64,
        SortColumn::Edges => r.edges as f64,
        SortColumn::Cycles => r.cycles.value() as f64,
    }
}

/// Descending by `col`; ties (and the unsorted case) by model, condition.
pub fn sort_rows(rows: &mut [GraphAttributes], col: Option<SortColumn>) {
    rows.sort_by(|a, b| {
        let key = match col {
            Some(c) => sort_value(b, c).total_cmp(&sort_value(a, c)),
            None => std::cmp::Ordering::Equal,
        };
        key.then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.condition.cmp(&b.condition))
    });
}

pub fn summary_csv(rows: &[(String, String, SummaryStats)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "attribute", "n", "mean", "min", "max", "sd"])
        .expect("in-memory write");
    for (model, attr, s) in rows {
        let mut row = vec![model.clone(), attr.clone()];
        row.extend(fmt_stats(s));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn metrics(ctx: &Context, args: MetricsArgs) -> Result<(), RunError> {
    let cap = args.cycle_cap.unwrap_or(ctx.cfg.metrics.cycle_cap);
    let graphs = load_graphs(&args.graphs)?;
    let mut scores: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for p in &args.reports {
        let r: EvalReport =
            serde_json::from_str(&read_file(p)?).map_err(|e| RunError::Validation(format!("{}: {e}", p.display())))?;
        scores.insert((r.model, r.root), (r.precision, r.recall));
    }
    let mut rows = Vec::with_capacity(graphs.len());
    for (path, g) in &graphs {
        let mut row =
            GraphAttributes::of(g, cap).map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
        if let Some((p, r)) = scores.get(&(row.model.clone(), row.condition.clone())) {
            row.precision = Some(*p);
            row.recall = Some(*r);
        }
        if row.cycles.is_capped() {
            warn!(graph = %path.display(), cap, "cycle count reached the cap");
        }
        rows.push(row);
    }
    sort_rows(&mut rows, args.sort_by);
    let table = attributes_csv(&rows);
    match &args.out {
        Some(p) => write_file(p, &table)?,
        None => print!("{table}"),
    }
    if let Some(p) = &args.summary {
        let stats = summarize_by_model(&rows, sd_of(args.population_sd, ctx.cfg.metrics.sd));
        write_file(p, &summary_csv(&stats))?;
    }
    Ok(())
}

pub fn review(ctx: &Context, args: ReviewArgs) -> Result<(), RunError> {
    let roster = if args.strict {
        if ctx.cfg.concepts.is_empty() || ctx.cfg.backends.is_empty() {
            return Err(RunError::Validation(
                "--strict needs `concepts` and backends in the config".into(),
            ));
        }
        Some(Roster {
            models: ctx.cfg.backends.keys().cloned().collect(),
            conditions: ctx.cfg.concepts.iter().cloned().collect(),
        })
    } else {
        None
    };
    let file = std::fs::File::open(&args.scores).map_err(|e| RunError::io(&args.scores, e))?;
    let records = load_reviews(file, &args.scores.display().to_string(), roster.as_ref())
        .map_err(|e| RunError::Validation(e.to_string()))?;
    let summary = aggregate(&records).map_err(|e| RunError::Validation(e.to_string()))?;
    for c in &summary.cells {
        if c.accuracy.n < EXPECTED_REVIEWERS {
            warn!(
                condition = %c.condition,
                model = %c.model,
                reviewers = c.accuracy.n,
                "fewer reviewers than expected; variance is degenerate"
            );
        }
    }
    write_file(&args.out.join("cells.csv"), &summary.cells_csv())?;
    write_file(&args.out.join("models.csv"), &summary.models_csv())?;
    write_file(&args.out.join("sorted.csv"), &summary.sorted_csv())?;
    write_file(&args.out.join("review.json"), &summary.to_json())?;
    print!("{}", summary.models_csv());
    Ok(())
}

pub fn export(args: ExportArgs) -> Result<(), RunError> {
    let g = ConceptGraph::from_json(&read_file(&args.graph)?)
        .map_err(|e| RunError::Validation(format!("{}: {e}", args.graph.display())))?;
    let text = match args.format {
        ExportFormat::Dot => exporters::to_dot(&g),
        ExportFormat::Graphml => exporters::to_graphml(&g),
        ExportFormat::Csv => exporters::to_edge_csv(&g),
    };
    match &args.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use causalkg::metrics::CycleCount;

    fn row(model: &str, cond: &str, density: f64) -> GraphAttributes {
        GraphAttributes {
            model: model.into(),
            condition: cond.into(),
            precision: None,
            recall: None,
            density,
            reciprocity: 0.0,
            nodes: 2,
            edges: 1,
            cycles: CycleCount::Exact(0),
        }
    }

    #[test]
    fn sort_descending_with_name_ties() {
        let mut rows = vec![
            row("m", "b", 0.1),
            row("m", "a", 0.3),
            row("m", "c", 0.3),
            row("a", "z", 0.2),
        ];
        sort_rows(&mut rows, Some(SortColumn::Density));
        let order: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(order, ["a", "c", "z", "b"]);
        sort_rows(&mut rows, None);
        let order: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(order, ["z", "a", "b", "c"]);
    }

    #[test]
    fn eval_summary_arithmetic() {
        let report = |model: &str, p: f64| EvalReport {
            root: "r".into(),
            model: model.into(),
            d: 7,
            n_hit: 0,
            mappable_edges: 0,
            generated_edges: 0,
            relevant_reference_edges: 0,
            precision: p,
            recall: 0.0,
            edges: vec![],
        };
        let csv = eval_summary_csv(&[report("m", 0.2), report("m", 0.4)], SdConvention::Sample);
        assert!(csv.contains("m,precision,2,0.3000,0.2000,0.4000,0.1414"), "{csv}");
        assert!(csv.contains("m,recall,2,0.0000,0.0000,0.0000,0.0000"), "{csv}");
    }
}
