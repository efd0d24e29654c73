//! OpenAI-compatible HTTP backend with bounded exponential-backoff retries.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, CompletionRequest, CompletionResult, FinishReason, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `POST {base}/completions` with a plain `prompt`.
    Completions,
    /// `POST {base}/chat/completions` with `messages`.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_wire")]
    pub wire: WireFormat,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_attempts() -> u32 {
    4
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    8_000
}
fn default_wire() -> WireFormat {
    WireFormat::Chat
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            backoff_base_ms: default_backoff_base(),
            backoff_max_ms: default_backoff_max(),
            wire: default_wire(),
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64
            .checked_shl(retry.saturating_sub(1))
            .unwrap_or(u64::MAX);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Done(CompletionResult),
    Retry(String),
    Fail(GatewayError),
}

impl RemoteBackend {
    /// Reads the API key from `config.api_key_env`.
    pub fn from_env(config: RemoteConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::MissingApiKey(config.api_key_env.clone()))?;
        Ok(Self::with_key(config, Some(key)))
    }

    pub fn with_key(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
                .http_status_as_error(false)
                .build(),
        );
        Self {
            config,
            api_key,
            agent,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.wire {
            WireFormat::Completions => format!("{base}/completions"),
            WireFormat::Chat => format!("{base}/chat/completions"),
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "n": 1,
        });
        match self.config.wire {
            WireFormat::Completions => {
                body["prompt"] = Value::String(format!(
                    "{}{}",
                    request.prompt_text, request.assistant_prefix
                ));
            }
            WireFormat::Chat => {
                let mut messages = vec![json!({"role": "user", "content": request.prompt_text})];
                if !request.assistant_prefix.is_empty() {
                    messages
                        .push(json!({"role": "assistant", "content": request.assistant_prefix}));
                }
                body["messages"] = Value::Array(messages);
            }
        }
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return classify_transport(e),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return classify_transport(e),
        };
        match status {
            200..=299 => match parse_response(&text, self.config.wire) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(GatewayError::Auth { status }),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fail(GatewayError::Rejected {
                status,
                body: truncate(&text, 512),
            }),
        }
    }
}

fn classify_transport(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::BodyStalled => Attempt::Retry(e.to_string()),
        other => Attempt::Fail(GatewayError::Protocol(other.to_string())),
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn parse_response(text: &str, wire: WireFormat) -> Result<CompletionResult, GatewayError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| GatewayError::Protocol(format!("body: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let content = match wire {
        WireFormat::Completions => choice.get("text"),
        WireFormat::Chat => choice.get("message").and_then(|m| m.get("content")),
    };
    let text = match content {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => {
            return Err(GatewayError::Protocol(format!(
                "content is not a string: {other}"
            )))
        }
    };
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") => FinishReason::Stop,
        _ => FinishReason::Eos,
    };
    let usage = v.get("usage");
    let count = |k: &str| {
        usage
            .and_then(|u| u.get(k))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(CompletionResult {
        text,
        finish_reason,
        prompt_tokens: count("prompt_tokens"),
        completion_tokens: count("completion_tokens"),
    })
}

impl Backend for RemoteBackend {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let url = self.endpoint();
        let body = self.body(request);
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(self.config.backoff(attempt - 1));
            }
            match self.attempt(&url, &body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(GatewayError::Network {
            attempts,
            message: last,
        })
    }
}
