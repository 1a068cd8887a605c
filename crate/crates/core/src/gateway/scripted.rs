use super::{ChatBackend, ChatRequest, GatewayError};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Canned answers for prompts containing `matches` (compared after
/// collapsing whitespace). `responses[i]` answers attempt `i`; the last entry
/// repeats for later attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matches: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    model: String,
    #[serde(default)]
    rules: Vec<ScriptRule>,
    #[serde(default)]
    default: Option<String>,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Offline backend replaying canned responses.
///
/// Keyed mode answers from the first rule whose key occurs in the user
/// prompt, so the answer depends only on the request. Ordered mode pops one
/// response per call and is only deterministic when calls are sequential.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    model: String,
    rules: Vec<(String, ScriptRule)>,
    default: Option<String>,
    queue: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn keyed(model: &str) -> Self {
        Self {
            model: model.to_string(),
            ..Self::default()
        }
    }

    pub fn ordered(model: &str, responses: Vec<String>) -> Self {
        Self {
            model: model.to_string(),
            queue: Mutex::new(responses.into()),
            ..Self::default()
        }
    }

    pub fn rule<I, S>(mut self, matches: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rule = ScriptRule {
            matches: matches.to_string(),
            responses: responses.into_iter().map(Into::into).collect(),
        };
        self.rules.push((squash(matches), rule));
        self
    }

    /// Answer for prompts no rule matches. Without one, such prompts fail.
    pub fn with_default(mut self, response: &str) -> Self {
        self.default = Some(response.to_string());
        self
    }

    /// Loads `{"model": .., "rules": [{"match": .., "responses": [..]}], "default": ..}`.
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("fixture file: {e}")))?;
        let mut backend = Self::keyed(&file.model);
        for r in file.rules {
            if r.responses.is_empty() {
                return Err(GatewayError::Config(format!(
                    "fixture rule {:?} has no responses",
                    r.matches
                )));
            }
            backend.rules.push((squash(&r.matches), r));
        }
        backend.default = file.default;
        Ok(backend)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every request received, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(request.clone());
        if let Some(next) = self.queue.lock().expect("queue lock").pop_front() {
            return Ok(next);
        }
        let prompt = squash(&request.user);
        if let Some((_, rule)) = self.rules.iter().find(|(k, _)| prompt.contains(k.as_str())) {
            let i = (request.attempt as usize).min(rule.responses.len() - 1);
            return Ok(rule.responses[i].clone());
        }
        self.default.clone().ok_or_else(|| GatewayError::Transport {
            attempts: 1,
            message: format!("scripted backend has no answer for prompt {:?}", truncate(&prompt)),
        })
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(120) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Backend computed by a closure; handy for synthetic responders in tests.
pub struct FnBackend<F> {
    model: String,
    respond: F,
    calls: AtomicUsize,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(model: &str, respond: F) -> Self {
        Self {
            model: model.to_string(),
            respond,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(request)
    }
}
