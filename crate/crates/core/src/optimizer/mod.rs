//! Prompt optimization by textual stochastic gradient descent, with and
//! without momentum.
//!
//! The momentum variant keeps every selected prompt in an
//! [`OptimizerHistory`]. Each block of a new candidate is generated by
//! conditioning on one past record drawn from the exponentially weighted
//! mixture of [`momentum_weights`]; the candidate so far is threaded through
//! as the assistant's partial reply so blocks from different sources cohere.

mod generate;
mod params;
mod run;
mod update;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::task::TaskError;
use crate::template::TemplateError;

pub use generate::{
    compute_textual_gradient, concat_momentum_prompt, generate_vanilla, momentum_generate,
    render_triples,
};
pub use params::{
    GenerationMode, GenerationParams, HypothesisPreset, RunConfig, DEFAULT_ANALYZE_TEMPLATE,
    DEFAULT_CASE1_REFINE_TEMPLATE, DEFAULT_CASE2_REFINE_TEMPLATE, DEFAULT_CONCAT_TEMPLATE,
};
pub use run::{
    run_tsgd, run_tsgd_with_scorer, write_run_log, IterationLog, RunFailure, RunLogRecord,
    RunResult, StopReason,
};
pub use update::{select_best, update_mom, update_vanilla, UpdateOutcome};
pub use weights::{momentum_weights, sample_source, WeightVector};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("cannot analyze an empty batch")]
    EmptyBatch,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("history invariant violated: {0}")]
    History(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// One (input, gold label, model output) observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub input: String,
    pub gold: String,
    pub prediction: String,
}

impl Triple {
    pub fn new(
        input: impl Into<String>,
        gold: impl Into<String>,
        prediction: impl Into<String>,
    ) -> Self {
        Self {
            input: input.into(),
            gold: gold.into(),
            prediction: prediction.into(),
        }
    }
}

/// A selected prompt together with the batch it was evaluated on and, for
/// gradient-style runs, its textual gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub iteration: usize,
    pub prompt_text: String,
    pub gradient_text: Option<String>,
    pub batch_triples: Vec<Triple>,
    pub holdout_score: f64,
}

impl PromptRecord {
    pub fn new(iteration: usize, prompt_text: impl Into<String>) -> Self {
        Self {
            iteration,
            prompt_text: prompt_text.into(),
            gradient_text: None,
            batch_triples: Vec::new(),
            holdout_score: 0.0,
        }
    }
}

/// Append-only record buffer. Iterations are `0, 1, 2, …` without gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHistory {
    records: Vec<PromptRecord>,
}

impl OptimizerHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a Case-1 history from plain prompt texts.
    pub fn from_prompts<S: AsRef<str>>(prompts: &[S]) -> Self {
        let mut h = Self::new();
        for (i, p) in prompts.iter().enumerate() {
            h.push(PromptRecord::new(i, p.as_ref()))
                .expect("sequential iterations");
        }
        h
    }

    pub fn push(&mut self, record: PromptRecord) -> Result<(), OptimizerError> {
        if record.iteration != self.records.len() {
            return Err(OptimizerError::History(format!(
                "expected iteration {}, got {}",
                self.records.len(),
                record.iteration
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[PromptRecord] {
        &self.records
    }

    pub fn latest(&self) -> Option<&PromptRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<PromptRecord> {
        self.records
    }
}
