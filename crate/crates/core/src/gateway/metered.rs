use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, CompletionResult, GatewayError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Counts successful calls and reported tokens; refuses calls once `budget`
/// calls have been made.
#[derive(Debug)]
pub struct MeteredBackend<B> {
    inner: B,
    budget: Option<u64>,
    attempted: AtomicU64,
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl<B: Backend> MeteredBackend<B> {
    pub fn new(inner: B, budget: Option<u64>) -> Self {
        Self {
            inner,
            budget,
            attempted: AtomicU64::new(0),
            calls: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    pub fn usage(&self) -> Usage {
        Usage {
            calls: self.calls.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for MeteredBackend<B> {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        if let Some(budget) = self.budget {
            if self.attempted.fetch_add(1, Ordering::SeqCst) >= budget {
                return Err(GatewayError::BudgetExceeded(budget));
            }
        }
        let result = self.inner.complete(request)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens
            .fetch_add(result.prompt_tokens, Ordering::SeqCst);
        self.completion_tokens
            .fetch_add(result.completion_tokens, Ordering::SeqCst);
        Ok(result)
    }
}
