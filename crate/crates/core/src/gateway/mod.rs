//! Uniform text-completion interface.
//!
//! Every backend implements [`Backend`]. Three are provided:
//! [`RemoteBackend`] talks to an OpenAI-compatible HTTP endpoint,
//! [`ScriptedBackend`] answers from a deterministic rule table, and
//! [`CachedBackend`] records or replays the responses of any other backend.
//! [`MeteredBackend`] counts calls and tokens and enforces a call budget.

mod cache;
mod metered;
mod remote;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cached_complete, CacheMode, CachedBackend, ReplayCache};
pub use metered::{MeteredBackend, Usage};
pub use remote::{RemoteBackend, RemoteConfig, WireFormat};
pub use scripted::{Fallback, Matcher, Rule, ScriptedBackend, ScriptedResponse};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("credentials rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("unparseable response: {0}")]
    Protocol(String),
    #[error("replay cache has no entry for digest {0}")]
    CacheMiss(String),
    #[error("gateway call budget of {0} calls exhausted")]
    BudgetExceeded(u64),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("cache file: {0}")]
    CacheFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    /// Text the model has already produced. Plain-completion backends append
    /// it to the prompt; chat backends send it as a trailing assistant turn.
    #[serde(default)]
    pub assistant_prefix: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Sampling seed forwarded to backends that accept one.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Provenance label only; never affects the response or the digest.
    #[serde(default)]
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(prompt_text: impl Into<String>, max_new_tokens: u32, temperature: f64) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            assistant_prefix: String::new(),
            max_new_tokens,
            temperature,
            stop_sequences: Vec::new(),
            seed: None,
            request_tag: String::new(),
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.assistant_prefix = prefix.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop_sequences = stop;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite nonnegative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over everything that determines the response. The
    /// request tag is excluded.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            prompt_text: &'a str,
            assistant_prefix: &'a str,
            max_new_tokens: u32,
            temperature: f64,
            stop_sequences: &'a [String],
            seed: Option<u64>,
        }
        let key = Key {
            prompt_text: &self.prompt_text,
            assistant_prefix: &self.assistant_prefix,
            max_new_tokens: self.max_new_tokens,
            // fold -0.0 into 0.0
            temperature: self.temperature + 0.0,
            stop_sequences: &self.stop_sequences,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&key).expect("digest key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Length,
    Stop,
    Eos,
}

impl FinishReason {
    /// True when the model ended the text itself rather than hitting the
    /// token limit.
    pub fn is_terminal(self) -> bool {
        matches!(self, FinishReason::Stop | FinishReason::Eos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

pub trait Backend: Send + Sync {
    /// Performs the call on an already-validated request.
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        self.send(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).send(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).send(request)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).send(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_tokens_and_negative_temperature() {
        let b = ScriptedBackend::constant("x");
        assert!(matches!(
            b.complete(&CompletionRequest::new("p", 0, 0.0)),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(matches!(
            b.complete(&CompletionRequest::new("p", 1, -0.1)),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(matches!(
            b.complete(&CompletionRequest::new("p", 1, f64::NAN)),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(b.call_log().is_empty());
    }

    #[test]
    fn digest_excludes_tag() {
        let a = CompletionRequest::new("p", 10, 0.7).with_tag("a");
        let b = CompletionRequest::new("p", 10, 0.7).with_tag("b");
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn digest_includes_sampling_fields() {
        let base = CompletionRequest::new("p", 10, 0.7);
        let variants = [
            CompletionRequest::new("p", 10, 1.1),
            CompletionRequest::new("q", 10, 0.7),
            CompletionRequest::new("p", 11, 0.7),
            base.clone().with_prefix("so far"),
            base.clone().with_seed(3),
            base.clone().with_stop(vec!["\n".into()]),
        ];
        for v in variants {
            assert_ne!(base.digest(), v.digest());
        }
    }

    #[test]
    fn digest_is_stable_across_runs() {
        // any change here invalidates persisted caches
        let r = CompletionRequest::new("Classify X", 16, 0.0);
        assert_eq!(
            r.digest(),
            "4ffc36a9b4a0d1b909e4262800bcb3b53b22726c33bb551618ae3f23fdb56a86"
        );
        let r = CompletionRequest::new("Classify X", 16, 0.7)
            .with_prefix("ab")
            .with_stop(vec!["\n".into()])
            .with_seed(5)
            .with_tag("ignored");
        assert_eq!(
            r.digest(),
            "d6aa7bc09f40b599b84b2341e46e290bb8a78f5e4a380e53b6da2e1cc4e2d11b"
        );
        assert_eq!(
            CompletionRequest::new("p", 1, -0.0).digest(),
            CompletionRequest::new("p", 1, 0.0).digest()
        );
    }
}
