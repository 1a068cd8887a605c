//! Text embeddings and cosine nearest-neighbour retrieval.

use crate::gateway::Backoff;
use rayon::prelude::*;
use serde::Deserialize;
use std::time::Duration;
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider configuration: {0}")]
    Config(String),
    #[error("embedding request failed: {0}")]
    Provider(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

pub fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Deterministic offline embedding: signed feature hashing of lowercase
/// character trigrams and whole words.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedding {
    pub dimension: usize,
}

impl Default for HashEmbedding {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl HashEmbedding {
    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        let lower = text.to_lowercase();
        let mut add = |feature: &str, weight: f32| {
            let h = fnv1a(feature.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign * weight;
        };
        for word in lower.split_whitespace() {
            add(&format!("w:{word}"), 1.0);
        }
        let padded: Vec<char> = format!("  {} ", lower.split_whitespace().collect::<Vec<_>>().join(" "))
            .chars()
            .collect();
        for w in padded.windows(3) {
            add(&w.iter().collect::<String>(), 1.0);
        }
        normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// OpenAI-style `/embeddings` endpoint.
pub struct OpenAiEmbedding {
    model: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    backoff: Backoff,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl OpenAiEmbedding {
    pub fn from_env(model: &str, base_url: &str, api_key_env: &str) -> Result<Self, EmbedError> {
        let key = std::env::var(api_key_env).unwrap_or_default();
        if key.trim().is_empty() {
            return Err(EmbedError::Config(format!(
                "credential environment variable {api_key_env} is not set"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self {
            model: model.to_string(),
            endpoint: format!("{}/embeddings", base_url.trim_end_matches('/')),
            api_key: key,
            client,
            backoff: Backoff::default(),
        })
    }

    fn send_once(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&serde_json::json!({"model": self.model, "input": texts}))
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let mut parsed: EmbeddingResponse = resp.json().map_err(|e| e.to_string())?;
        if parsed.data.len() != texts.len() {
            return Err(format!("{} vectors for {} inputs", parsed.data.len(), texts.len()));
        }
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingProvider for OpenAiEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut last = String::new();
        for attempt in 0..self.backoff.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt - 1));
            }
            match self.send_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    warn!(attempt, error = %e, "embedding request failed");
                    last = e;
                }
            }
        }
        Err(EmbedError::Provider(last))
    }
}

/// Unit-normalized vectors for every reference concept.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    names: Vec<String>,
    vectors: Vec<Vec<f32>>,
    dimension: usize,
}

const BATCH: usize = 256;

impl EmbeddingIndex {
    pub fn build(provider: &dyn EmbeddingProvider, names: &[String]) -> Result<Self, EmbedError> {
        let mut vectors = Vec::with_capacity(names.len());
        for chunk in names.chunks(BATCH) {
            let got = provider.embed(chunk)?;
            if got.len() != chunk.len() {
                return Err(EmbedError::Provider(format!(
                    "{} vectors for {} inputs",
                    got.len(),
                    chunk.len()
                )));
            }
            vectors.extend(got);
        }
        let dimension = vectors.first().map_or(0, Vec::len);
        for v in &mut vectors {
            if v.len() != dimension {
                return Err(EmbedError::Dimension {
                    expected: dimension,
                    got: v.len(),
                });
            }
            normalize(v);
        }
        Ok(Self {
            names: names.to_vec(),
            vectors,
            dimension,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i]
    }

    /// Top `k` concepts by cosine similarity, best first; equal scores are
    /// ordered by name.
    pub fn nearest(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        if !self.is_empty() && query.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .par_iter()
            .enumerate()
            .map(|(i, v)| (i, cosine(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.names[a.0].cmp(&self.names[b.0])));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.names[i].clone(), s))
            .collect())
    }
}
