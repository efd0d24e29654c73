use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    compute_textual_gradient, update_mom, update_vanilla, GenerationMode, OptimizerError,
    OptimizerHistory, PromptRecord, RunConfig, Triple,
};
use crate::gateway::{Backend, MeteredBackend, Usage};
use crate::rng::{domain, RandomStream};
use crate::task::{predict_for, sample_batch, ScoreFunction, Scorer, TaskBinding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    EarlyStopped,
}

/// Outcome of one step. Entry `i` describes prompt `p_i`; entry 0 is the
/// initial prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub selected_prompt: String,
    pub holdout_score: f64,
    pub candidate_scores: Vec<f64>,
    pub selected_candidate: Option<usize>,
    /// Gateway usage accumulated up to and including this entry.
    pub cumulative: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_prompt: String,
    pub best_iteration: usize,
    pub best_score: f64,
    pub per_iteration: Vec<IterationLog>,
    pub stop_reason: StopReason,
    pub total_lm_calls: u64,
    pub usage: Usage,
    pub history: Vec<PromptRecord>,
}

#[derive(Debug, Error)]
#[error("run failed after {} recorded iterations: {error}", .partial.len())]
pub struct RunFailure {
    #[source]
    pub error: OptimizerError,
    pub partial: Vec<IterationLog>,
}

impl RunFailure {
    fn early(error: impl Into<OptimizerError>) -> Self {
        Self {
            error: error.into(),
            partial: Vec::new(),
        }
    }
}

/// Runs the full optimization loop, scoring prompts by accuracy on the task's
/// holdout split through `lm`.
pub fn run_tsgd(
    config: &RunConfig,
    task: &TaskBinding,
    lm: &dyn Backend,
) -> Result<RunResult, RunFailure> {
    let metered = MeteredBackend::new(lm, config.max_gateway_calls);
    let scorer = ScoreFunction::holdout(task, &metered);
    drive(config, task, &metered, &scorer)
}

/// As [`run_tsgd`] but with a caller-supplied score function. Calls the
/// scorer makes on its own backend are not counted.
pub fn run_tsgd_with_scorer(
    config: &RunConfig,
    task: &TaskBinding,
    lm: &dyn Backend,
    scorer: &dyn Scorer,
) -> Result<RunResult, RunFailure> {
    let metered = MeteredBackend::new(lm, config.max_gateway_calls);
    drive(config, task, &metered, scorer)
}

fn drive(
    config: &RunConfig,
    task: &TaskBinding,
    lm: &MeteredBackend<&dyn Backend>,
    scorer: &dyn Scorer,
) -> Result<RunResult, RunFailure> {
    config.validate().map_err(RunFailure::early)?;
    task.validate().map_err(RunFailure::early)?;
    let pool = match config.train_size {
        Some(n) if n > task.train.len() => {
            return Err(RunFailure::early(OptimizerError::InvalidParams(format!(
                "train_size {n} exceeds the {} available training examples",
                task.train.len()
            ))))
        }
        Some(n) => &task.train[..n],
        None => &task.train[..],
    };

    let mut log: Vec<IterationLog> = Vec::new();
    match step_loop(config, task, pool, lm, scorer, &mut log) {
        Ok((history, stop_reason)) => {
            let best = best_entry(&log);
            let usage = lm.usage();
            Ok(RunResult {
                best_prompt: best.selected_prompt.clone(),
                best_iteration: best.iteration,
                best_score: best.holdout_score,
                stop_reason,
                total_lm_calls: usage.calls,
                usage,
                history: history.into_records(),
                per_iteration: log,
            })
        }
        Err(error) => Err(RunFailure {
            error,
            partial: log,
        }),
    }
}

/// Highest holdout score, earliest iteration on ties.
fn best_entry(log: &[IterationLog]) -> &IterationLog {
    let mut best = &log[0];
    for entry in &log[1..] {
        if entry.holdout_score > best.holdout_score {
            best = entry;
        }
    }
    best
}

fn step_loop(
    config: &RunConfig,
    task: &TaskBinding,
    pool: &[crate::task::LabeledExample],
    lm: &MeteredBackend<&dyn Backend>,
    scorer: &dyn Scorer,
    log: &mut Vec<IterationLog>,
) -> Result<(OptimizerHistory, StopReason), OptimizerError> {
    let gen = &config.generation;
    let root = RandomStream::new(config.seed);
    let mut history = OptimizerHistory::new();

    let mut current = task.initial_prompt.clone();
    let mut current_score = scorer.score(&current)?;
    log.push(IterationLog {
        iteration: 0,
        selected_prompt: current.clone(),
        holdout_score: current_score,
        candidate_scores: Vec::new(),
        selected_candidate: None,
        cumulative: lm.usage(),
    });
    let mut best_score = current_score;
    let mut stale = 0usize;

    for t in 0..config.total_iterations {
        let mut batch_rng = root.substream(&[domain::BATCH, t as u64]);
        let batch = sample_batch(
            pool,
            config.batch_size,
            &mut batch_rng,
            config.with_replacement,
        )?;
        let mut triples = Vec::with_capacity(batch.len());
        for ex in &batch {
            let prediction = predict_for(task, lm, &current, &ex.input_text)?;
            triples.push(Triple::new(
                ex.input_text.clone(),
                ex.gold_label.clone(),
                prediction.raw.trim(),
            ));
        }
        let mut record = PromptRecord {
            iteration: t,
            prompt_text: current.clone(),
            gradient_text: None,
            batch_triples: triples,
            holdout_score: current_score,
        };
        if gen.mode == GenerationMode::Case2Gradient {
            let analyze = gen
                .analyze_template
                .as_ref()
                .ok_or_else(|| OptimizerError::InvalidParams("missing analyze template".into()))?;
            record.gradient_text = Some(compute_textual_gradient(&record, analyze, lm, gen)?);
        }
        history.push(record)?;

        let outcome = if config.use_momentum {
            update_mom(&history, gen, scorer, &root, lm)?
        } else {
            let latest = history.latest().expect("just pushed");
            update_vanilla(latest, gen, scorer, &root, lm)?
        };
        let score = match outcome.candidate_scores.get(outcome.selected) {
            Some(&s) => s,
            None => scorer.score(&outcome.prompt)?,
        };
        log.push(IterationLog {
            iteration: t + 1,
            selected_prompt: outcome.prompt.clone(),
            holdout_score: score,
            selected_candidate: (!outcome.candidate_scores.is_empty()).then_some(outcome.selected),
            candidate_scores: outcome.candidate_scores,
            cumulative: lm.usage(),
        });

        current = outcome.prompt;
        current_score = score;
        if score > best_score {
            best_score = score;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                return Ok((history, StopReason::EarlyStopped));
            }
        }
    }
    Ok((history, StopReason::MaxIterations))
}

/// One line of the replay-debugging run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub iteration: usize,
    pub candidate_index: Option<usize>,
    pub score: f64,
    pub selected: bool,
    pub cumulative_calls: u64,
    pub cumulative_tokens: u64,
}

impl RunResult {
    pub fn log_records(&self) -> Vec<RunLogRecord> {
        let mut out = Vec::new();
        for entry in &self.per_iteration {
            let base = RunLogRecord {
                iteration: entry.iteration,
                candidate_index: None,
                score: entry.holdout_score,
                selected: true,
                cumulative_calls: entry.cumulative.calls,
                cumulative_tokens: entry.cumulative.total_tokens(),
            };
            if entry.candidate_scores.is_empty() {
                out.push(base);
                continue;
            }
            for (j, &score) in entry.candidate_scores.iter().enumerate() {
                out.push(RunLogRecord {
                    candidate_index: Some(j),
                    score,
                    selected: entry.selected_candidate == Some(j),
                    ..base.clone()
                });
            }
        }
        out
    }
}

/// Writes [`RunResult::log_records`] as line-delimited JSON.
pub fn write_run_log(result: &RunResult, mut out: impl Write) -> std::io::Result<()> {
    for record in result.log_records() {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
