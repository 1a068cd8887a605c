//! Run configuration file (TOML).

use causalkg::embed::{EmbeddingProvider, HashEmbedding, OpenAiEmbedding};
use causalkg::gateway::{ChatBackend, OpenAiChatBackend, ScriptedBackend};
use causalkg::metrics::{SdConvention, DEFAULT_CYCLE_CAP};
use causalkg::{EvalParams, GatewayError, GenerationParams, SamplingParams};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// OpenAI-compatible chat completions endpoint.
    Openai {
        model: String,
        #[serde(default = "default_base_url")]
        base_url: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
    /// Canned responses from a fixture file.
    Scripted { fixtures: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Openai {
        model: String,
        #[serde(default = "default_base_url")]
        base_url: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash {
            dimension: default_dimension(),
        }
    }
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_dimension() -> usize {
    256
}

fn default_concurrency() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub cycle_cap: u64,
    pub sd: SdConvention,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cycle_cap: DEFAULT_CYCLE_CAP,
            sd: SdConvention::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Directory of `<template>.txt` files overriding the built-in prompts.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    /// Queries in flight per concept.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Concepts generated at the same time.
    #[serde(default = "default_concurrency")]
    pub parallel_concepts: usize,
    /// Chat backends by name.
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    /// Backend that adjudicates node mappings; defaults to the run backend.
    #[serde(default)]
    pub mapping_backend: Option<String>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub evaluation: EvalParams,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, RunError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Validation(format!("config: {e}")))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.cache_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.prompts_dir.as_mut() {
            fix(p);
        }
        for b in cfg.backends.values_mut() {
            if let BackendConfig::Scripted { fixtures } = b {
                fix(fixtures);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Validation(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let v = |e: String| RunError::Validation(e);
        self.sampling.validate().map_err(|e| v(e.to_string()))?;
        self.generation.validate().map_err(|e| v(e.to_string()))?;
        self.evaluation.validate().map_err(|e| v(e.to_string()))?;
        if self.concurrency == 0 || self.parallel_concepts == 0 {
            return Err(v("concurrency and parallel_concepts must be at least 1".into()));
        }
        if self.metrics.cycle_cap == 0 {
            return Err(v("metrics.cycle_cap must be at least 1".into()));
        }
        if let Some(m) = &self.mapping_backend {
            if !self.backends.contains_key(m) {
                return Err(v(format!("mapping_backend {m:?} is not a configured backend")));
            }
        }
        Ok(())
    }

    /// Backend names to run: the one requested, or all configured.
    pub fn backend_names(&self, requested: Option<&str>) -> Result<Vec<String>, RunError> {
        match requested {
            Some(name) if self.backends.contains_key(name) => Ok(vec![name.to_string()]),
            Some(name) => Err(RunError::Validation(format!(
                "backend {name:?} is not configured (have: {})",
                self.backends.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
            None if self.backends.is_empty() => Err(RunError::Validation(
                "no backends configured; add a [backends.<name>] table or pass --seed-fixtures".into(),
            )),
            None => Ok(self.backends.keys().cloned().collect()),
        }
    }
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn ChatBackend>, RunError> {
    match cfg {
        BackendConfig::Openai {
            model,
            base_url,
            api_key_env,
        } => Ok(Arc::new(
            OpenAiChatBackend::from_env(model, base_url, api_key_env).map_err(RunError::Backend)?,
        )),
        BackendConfig::Scripted { fixtures } => Ok(Arc::new(load_fixtures(fixtures)?)),
    }
}

pub fn load_fixtures(path: &Path) -> Result<ScriptedBackend, RunError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunError::Validation(format!("reading {}: {e}", path.display())))?;
    ScriptedBackend::from_json(&text).map_err(|e| match e {
        GatewayError::Config(m) => RunError::Validation(format!("{}: {m}", path.display())),
        other => RunError::Backend(other),
    })
}

pub fn build_embedding(cfg: &EmbeddingConfig) -> Result<Box<dyn EmbeddingProvider>, RunError> {
    match cfg {
        EmbeddingConfig::Hash { dimension } => {
            if *dimension == 0 {
                return Err(RunError::Validation("embedding dimension must be positive".into()));
            }
            Ok(Box::new(HashEmbedding { dimension: *dimension }))
        }
        EmbeddingConfig::Openai {
            model,
            base_url,
            api_key_env,
        } => Ok(Box::new(
            OpenAiEmbedding::from_env(model, base_url, api_key_env)
                .map_err(|e| RunError::Backend(GatewayError::Config(e.to_string())))?,
        )),
    }
}
