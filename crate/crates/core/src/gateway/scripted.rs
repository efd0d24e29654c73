use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, CompletionResult, FinishReason, GatewayError};

/// Pattern over the request's `prompt_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Contains(String),
    Exact(String),
    StartsWith(String),
    EndsWith(String),
    All(Vec<Matcher>),
    Any(Vec<Matcher>),
}

impl Matcher {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Contains(p) => text.contains(p.as_str()),
            Matcher::Exact(p) => text == p,
            Matcher::StartsWith(p) => text.starts_with(p.as_str()),
            Matcher::EndsWith(p) => text.ends_with(p.as_str()),
            Matcher::All(ms) => ms.iter().all(|m| m.matches(text)),
            Matcher::Any(ms) => ms.iter().any(|m| m.matches(text)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    #[serde(default = "default_finish")]
    pub finish_reason: FinishReason,
}

fn default_finish() -> FinishReason {
    FinishReason::Stop
}

impl ScriptedResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn length(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub matcher: Matcher,
    pub response: ScriptedResponse,
}

/// What to answer when no rule matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Constant(ScriptedResponse),
    /// Pseudo-text drawn from `words`, a pure function of the request digest.
    /// One word counts as one token. Roughly one request in eight ends early
    /// with `stop`; the rest fill `max_new_tokens` and end with `length`.
    Vocabulary(Vec<String>),
}

/// Deterministic rule-table backend for offline runs and tests.
///
/// The first matching rule wins; otherwise the fallback answers. Every
/// completed call is appended to the call log.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
    fallback: Fallback,
    call_log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<Rule>, fallback: Fallback) -> Self {
        Self {
            rules,
            fallback,
            call_log: Mutex::new(Vec::new()),
        }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(Vec::new(), Fallback::Constant(ScriptedResponse::stop(text)))
    }

    pub fn rule(mut self, matcher: Matcher, response: ScriptedResponse) -> Self {
        self.rules.push(Rule { matcher, response });
        self
    }

    pub fn call_log(&self) -> Vec<CompletionRequest> {
        self.log().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log().len()
    }

    pub fn clear_log(&self) {
        self.log().clear();
    }

    fn log(&self) -> MutexGuard<'_, Vec<CompletionRequest>> {
        self.call_log.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn respond(&self, request: &CompletionRequest) -> ScriptedResponse {
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(&request.prompt_text))
        {
            return rule.response.clone();
        }
        match &self.fallback {
            Fallback::Constant(r) => r.clone(),
            Fallback::Vocabulary(words) => vocabulary_text(words, request),
        }
    }
}

fn vocabulary_text(words: &[String], request: &CompletionRequest) -> ScriptedResponse {
    if words.is_empty() {
        return ScriptedResponse::stop("");
    }
    let seed = Sha256::digest(request.digest().as_bytes());
    let mut state = u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"));
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let max = request.max_new_tokens as u64;
    let early = next() % 8 == 0;
    let n = if early { 1 + next() % max } else { max };
    let mut text = String::new();
    for i in 0..n {
        if i > 0 || !request.assistant_prefix.is_empty() {
            text.push(' ');
        }
        text.push_str(&words[(next() % words.len() as u64) as usize]);
    }
    if early {
        ScriptedResponse::stop(text)
    } else {
        ScriptedResponse::length(text)
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Backend for ScriptedBackend {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let response = self.respond(request);
        let completion_tokens = match response.finish_reason {
            FinishReason::Length => request.max_new_tokens as u64,
            _ => word_count(&response.text).min(request.max_new_tokens as u64),
        };
        let result = CompletionResult {
            prompt_tokens: word_count(&request.prompt_text) + word_count(&request.assistant_prefix),
            completion_tokens,
            text: response.text,
            finish_reason: response.finish_reason,
        };
        self.log().push(request.clone());
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(p: &str) -> CompletionRequest {
        CompletionRequest::new(p, 16, 0.0)
    }

    #[test]
    fn default_response_when_no_rule() {
        let b = ScriptedBackend::constant("positive");
        let r = b.complete(&req("anything")).unwrap();
        assert_eq!(r.text, "positive");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn first_matching_rule_wins() {
        let b = ScriptedBackend::constant("default")
            .rule(
                Matcher::Contains("Answer:".into()),
                ScriptedResponse::stop("negative"),
            )
            .rule(
                Matcher::EndsWith("Answer:".into()),
                ScriptedResponse::stop("positive"),
            );
        assert_eq!(b.complete(&req("text\nAnswer:")).unwrap().text, "negative");
        assert_eq!(b.complete(&req("no match")).unwrap().text, "default");
    }

    #[test]
    fn matcher_kinds() {
        assert!(Matcher::Exact("ab".into()).matches("ab"));
        assert!(!Matcher::Exact("ab".into()).matches("abc"));
        assert!(Matcher::StartsWith("ab".into()).matches("abc"));
        assert!(!Matcher::EndsWith("ab".into()).matches("abc"));
        let both = Matcher::All(vec![
            Matcher::Contains("a".into()),
            Matcher::Contains("z".into()),
        ]);
        assert!(both.matches("a..z"));
        assert!(!both.matches("a"));
        let either = Matcher::Any(vec![Matcher::Exact("a".into()), Matcher::Exact("z".into())]);
        assert!(either.matches("z"));
    }

    #[test]
    fn log_grows_once_per_call() {
        let b = ScriptedBackend::constant("x");
        for i in 0..5 {
            b.complete(&req("p").with_tag(format!("t{i}"))).unwrap();
        }
        let log = b.call_log();
        assert_eq!(log.len(), 5);
        assert_eq!(log[3].request_tag, "t3");
    }

    #[test]
    fn length_reports_full_budget() {
        let b = ScriptedBackend::new(
            vec![],
            Fallback::Constant(ScriptedResponse::length("STEP ")),
        );
        let r = b.complete(&CompletionRequest::new("p", 10, 0.7)).unwrap();
        assert_eq!(r.completion_tokens, 10);
    }

    #[test]
    fn vocabulary_is_pure_and_bounded() {
        let words: Vec<String> = ["alpha", "beta", "gamma"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let b = ScriptedBackend::new(vec![], Fallback::Vocabulary(words));
        for seed in 0..50 {
            let r = CompletionRequest::new("p", 10, 0.7).with_seed(seed);
            let x = b.complete(&r).unwrap();
            let y = b.complete(&r).unwrap();
            assert_eq!(x, y);
            let n = x.text.split_whitespace().count();
            assert!((1..=10).contains(&n));
            if x.finish_reason == FinishReason::Length {
                assert_eq!(n, 10);
            }
        }
    }
}
