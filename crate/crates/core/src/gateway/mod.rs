//! Chat-LLM access: backends, response caching and re-prompting on
//! malformed answers.

mod cache;
mod http;
mod scripted;

pub use cache::{cache_key, ResponseCache};
pub use http::{Backoff, OpenAiChatBackend};
pub use scripted::{FnBackend, ScriptRule, ScriptedBackend};

use crate::parse::ParseError;
use crate::prompts::TemplateName;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("response truncated by the backend")]
    Truncated,
    #[error("backend returned no content")]
    EmptyResponse,
    #[error("malformed response after {attempts} attempts ({reason}); last answer: {last_raw:?}")]
    MalformedResponse {
        attempts: u32,
        reason: ParseError,
        last_raw: String,
    },
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_malformed(&self) -> bool {
        matches!(self, GatewayError::MalformedResponse { .. })
    }
}

/// Sampling settings sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// Re-prompts after the first attempt when the answer does not parse.
    pub max_retries: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            top_p: 1.0,
            max_retries: 3,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// A single-turn exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    /// 0 for the first try, incremented on every re-prompt.
    pub attempt: u32,
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl GatewayStats {
    /// Calls to `ask`, cached or not.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn backend_calls(&self) -> usize {
        self.requests() - self.cache_hits()
    }
}

/// A backend plus optional cache and the run's sampling parameters.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<ResponseCache>>,
    params: SamplingParams,
    stats: Arc<GatewayStats>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, params: SamplingParams) -> Self {
        Self {
            backend,
            cache: None,
            params,
            stats: Arc::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn params(&self) -> &SamplingParams {
        &self.params
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    /// One raw exchange, served from the cache when possible.
    pub fn ask(
        &self,
        template: TemplateName,
        system: Option<&str>,
        user: &str,
        attempt: u32,
    ) -> Result<String, GatewayError> {
        self.stats.requests.fetch_add(1, Ordering::Relaxed);
        let key = cache_key(self.model_id(), template, system, user, &self.params, attempt);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        let request = ChatRequest {
            system: system.map(str::to_string),
            user: user.to_string(),
            temperature: self.params.temperature,
            top_p: self.params.top_p,
            attempt,
        };
        let text = self.backend.complete(&request)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(text)
    }

    /// Re-prompts until `validator` accepts an answer, for at most
    /// `max_retries + 1` attempts.
    pub fn ask_validated<T>(
        &self,
        template: TemplateName,
        system: Option<&str>,
        user: &str,
        validator: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.params.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            let raw = self.ask(template, system, user, attempt)?;
            match validator(&raw) {
                Ok(v) => {
                    if attempt > 0 {
                        debug!(%template, attempt, "answer parsed after re-prompting");
                    }
                    return Ok(v);
                }
                Err(reason) => {
                    warn!(%template, attempt, %reason, "unparsable answer");
                    last = Some((reason, raw));
                }
            }
        }
        let (reason, last_raw) = last.expect("at least one attempt");
        Err(GatewayError::MalformedResponse {
            attempts,
            reason,
            last_raw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_verdict, Verdict};

    fn gateway(responses: &[&str], max_retries: u32) -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::ordered(
            "scripted",
            responses.iter().map(|s| s.to_string()).collect(),
        ));
        let params = SamplingParams {
            max_retries,
            ..SamplingParams::default()
        };
        (Gateway::new(backend.clone(), params), backend)
    }

    #[test]
    fn defaults() {
        let p = SamplingParams::default();
        assert_eq!(p.temperature, 0.05);
        assert_eq!(p.top_p, 1.0);
        assert_eq!(p.max_retries, 3);
        p.validate().unwrap();
        assert!(SamplingParams { top_p: 0.0, ..p }.validate().is_err());
        assert!(SamplingParams { temperature: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn first_answer_accepted() {
        let (g, b) = gateway(&["[yes]"], 3);
        let v = g
            .ask_validated(TemplateName::EdgeCheck, None, "q", parse_verdict)
            .unwrap();
        assert_eq!(v, Verdict::Yes);
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn retry_until_parse() {
        let (g, b) = gateway(&["maybe", "[no]"], 3);
        let v = g
            .ask_validated(TemplateName::EdgeCheck, None, "q", parse_verdict)
            .unwrap();
        assert_eq!(v, Verdict::No);
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn retry_budget_exhausted() {
        let (g, b) = gateway(&["a", "b", "c", "[yes]"], 2);
        let err = g
            .ask_validated(TemplateName::EdgeCheck, None, "q", parse_verdict)
            .unwrap_err();
        match err {
            GatewayError::MalformedResponse { attempts, last_raw, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "c");
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(b.calls(), 3);
    }

    #[test]
    fn cache_serves_repeat_and_keys_on_attempt() {
        let backend =
            Arc::new(ScriptedBackend::keyed("scripted").rule("Does A directly cause B?", ["garbled", "[yes]"]));
        let cache = Arc::new(ResponseCache::in_memory());
        let g = Gateway::new(backend.clone(), SamplingParams::default()).with_cache(cache);
        let ask = || {
            g.ask_validated(TemplateName::EdgeCheck, None, "Does A directly cause B?", parse_verdict)
                .unwrap()
        };
        assert_eq!(ask(), Verdict::Yes);
        assert_eq!(backend.calls(), 2);
        // the failing attempt-0 answer is cached but attempt 1 is too
        assert_eq!(ask(), Verdict::Yes);
        assert_eq!(backend.calls(), 2);
        assert_eq!(g.stats().cache_hits(), 2);
    }
}
