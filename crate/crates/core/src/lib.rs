//! Prompt optimization by textual gradient descent with momentum.
//!
//! [`optimizer::run_tsgd`] drives the search against any [`gateway::Backend`];
//! [`variance`] holds the scalar smoothing model used to reason about why
//! averaging over past prompts helps.

pub mod gateway;
pub mod optimizer;
pub mod rng;
pub mod task;
pub mod template;
pub mod variance;

pub use gateway::{
    Backend, CacheMode, CachedBackend, CompletionRequest, CompletionResult, FinishReason,
    GatewayError, MeteredBackend, RemoteBackend, RemoteConfig, ReplayCache, ScriptedBackend, Usage,
};
pub use optimizer::{
    momentum_weights, run_tsgd, GenerationMode, GenerationParams, HypothesisPreset, OptimizerError,
    OptimizerHistory, PromptRecord, RunConfig, RunFailure, RunResult, StopReason,
};
pub use rng::RandomStream;
pub use task::{LabeledExample, Scorer, TaskBinding, TaskError};
pub use template::{TemplateError, TemplateText};
pub use variance::{
    ema_mse_theory, simulate_ema, variance_report, EmaModel, VarianceError, VarianceReport,
};
