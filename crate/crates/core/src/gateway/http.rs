use super::{ChatBackend, ChatRequest, GatewayError};
use serde::Deserialize;
use std::time::Duration;
use tracing::warn;

/// Exponential backoff for transport failures (connection errors, 429, 5xx).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_millis(500),
            factor: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    pub fn delay(&self, retry: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_delay.as_secs_f64()))
    }
}

/// OpenAI-style `/chat/completions` endpoint.
pub struct OpenAiChatBackend {
    model: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    backoff: Backoff,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

impl OpenAiChatBackend {
    /// Reads the credential from `api_key_env`; fails before any network
    /// traffic when it is unset or empty.
    pub fn from_env(model: &str, base_url: &str, api_key_env: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(api_key_env).unwrap_or_default();
        if key.trim().is_empty() {
            return Err(GatewayError::Config(format!(
                "credential environment variable {api_key_env} is not set"
            )));
        }
        Self::new(model, base_url, &key)
    }

    pub fn new(model: &str, base_url: &str, api_key: &str) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            model: model.to_string(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
            client,
            backoff: Backoff::default(),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        })
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, Failure> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(GatewayError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            }));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| Failure::Retryable(format!("undecodable body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(Failure::Fatal(GatewayError::EmptyResponse))?;
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(Failure::Fatal(GatewayError::Truncated));
        }
        choice
            .message
            .content
            .ok_or(Failure::Fatal(GatewayError::EmptyResponse))
    }
}

impl ChatBackend for OpenAiChatBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = self.request_body(request);
        let mut last = String::new();
        for attempt in 0..self.backoff.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt - 1));
            }
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!(attempt, error = %msg, "chat request failed");
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.backoff.max_attempts,
            message: last,
        })
    }
}
