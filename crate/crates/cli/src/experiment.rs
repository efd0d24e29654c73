//! Trial orchestration and report files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tsgdm_core::gateway::{
    Backend, CacheMode, CachedBackend, Fallback, GatewayError, MeteredBackend, RemoteBackend,
    ReplayCache, ScriptedBackend,
};
use tsgdm_core::optimizer::{run_tsgd, write_run_log, IterationLog, RunResult};
use tsgdm_core::task::synthetic::{binary_sentiment, sentiment_backend};
use tsgdm_core::task::{
    load_dataset, preset, LabeledExample, ScoreFunction, Scorer, TaskBinding, TaskError,
    FORWARD_TEMPLATE,
};
use tsgdm_core::template::TemplateText;

use crate::config::{apply_axis, BackendKind, ConfigError, ExperimentConfig, Sweep, TaskSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task: {0}")]
    Task(#[from] TaskError),
    #[error("backend: {0}")]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no sweep configured")]
    NoSweep,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub error: Option<String>,
    pub test_accuracy: Option<f64>,
    pub result: Option<RunResult>,
    /// Iterations finished before a failure; empty on success.
    pub partial: Vec<IterationLog>,
}

impl TrialReport {
    pub fn iterations(&self) -> &[IterationLog] {
        match &self.result {
            Some(r) => &r.per_iteration,
            None => &self.partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub seeds: Vec<u64>,
    /// Final test accuracy of each completed trial, in trial order.
    pub test_accuracies: Vec<f64>,
    pub mean_test_accuracy: Option<f64>,
    /// Sample standard deviation; 0 for a single trial.
    pub std_test_accuracy: Option<f64>,
    pub mean_best_holdout: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub trials: Vec<TrialReport>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn all_completed(&self) -> bool {
        self.summary.failed == 0
    }
}

/// Mean and sample standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Builds the task named in the config, loading any dataset files.
pub fn load_task(spec: &TaskSpec) -> Result<TaskBinding, ExperimentError> {
    let mut task = if spec.name.eq_ignore_ascii_case("synthetic") {
        let s = &spec.synthetic;
        binary_sentiment(s.seed, s.train, s.holdout, s.test)
    } else {
        let paths = [&spec.train, &spec.holdout, &spec.test];
        let [train, holdout, test] = paths.map(|p| p.as_deref().expect("validated by config"));
        match preset(&spec.name) {
            Some(p) => {
                let mut p = p.clone();
                if let Some(labels) = &spec.label_set {
                    p.label_set = labels.clone();
                }
                p.bind(train, holdout, test)?
            }
            None => {
                let labels = spec.label_set.clone().unwrap_or_default();
                let load = |path: &Path| -> Result<Vec<LabeledExample>, TaskError> {
                    load_dataset(path, &labels)
                };
                TaskBinding {
                    name: spec.name.clone(),
                    train: load(train)?,
                    holdout: load(holdout)?,
                    test: load(test)?,
                    label_set: labels.clone(),
                    initial_prompt: String::new(),
                    forward_template: TemplateText::new(FORWARD_TEMPLATE),
                }
            }
        }
    };
    if let Some(p) = &spec.initial_prompt {
        task.initial_prompt = p.clone();
    }
    task.validate()?;
    Ok(task)
}

fn scripted_backend(spec: &TaskSpec, task: &TaskBinding) -> ScriptedBackend {
    if spec.name.eq_ignore_ascii_case("synthetic") {
        return sentiment_backend(&spec.synthetic.cue);
    }
    let mut words: Vec<String> = task.label_set.clone();
    words.extend(task.initial_prompt.split_whitespace().map(str::to_string));
    if words.is_empty() {
        words.push("0".into());
    }
    ScriptedBackend::new(Vec::new(), Fallback::Vocabulary(words))
}

struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<(Arc<ReplayCache>, PathBuf)>,
}

fn build_gateway(
    config: &ExperimentConfig,
    task: &TaskBinding,
) -> Result<Gateway, ExperimentError> {
    let inner: Box<dyn Backend> = match &config.backend.kind {
        BackendKind::Scripted => Box::new(scripted_backend(&config.task, task)),
        BackendKind::Remote(remote) => {
            let key = std::env::var(&remote.api_key_env).ok();
            let replaying = matches!(&config.backend.cache, Some(c) if c.mode == CacheMode::Replay);
            if key.is_none() && !replaying {
                return Err(GatewayError::MissingApiKey(remote.api_key_env.clone()).into());
            }
            Box::new(RemoteBackend::with_key(remote.clone(), key))
        }
    };
    Ok(match &config.backend.cache {
        None => Gateway {
            backend: inner,
            cache: None,
        },
        Some(spec) => {
            let cache = Arc::new(ReplayCache::load(&spec.path, spec.mode)?);
            Gateway {
                backend: Box::new(CachedBackend::new(Arc::clone(&cache), inner)),
                cache: Some((cache, spec.path.clone())),
            }
        }
    })
}

fn run_trial(
    config: &ExperimentConfig,
    task: &TaskBinding,
    lm: &dyn Backend,
    trial: usize,
) -> TrialReport {
    let seed = config.seed_base.wrapping_add(trial as u64);
    let mut run = config.run.clone();
    run.seed = seed;
    let failed = |error: String, partial: Vec<IterationLog>| TrialReport {
        trial,
        seed,
        status: TrialStatus::Failed,
        error: Some(error),
        test_accuracy: None,
        result: None,
        partial,
    };
    let result = match run_tsgd(&run, task, lm) {
        Ok(r) => r,
        Err(f) => return failed(f.error.to_string(), f.partial),
    };
    // test scoring draws on whatever budget the run left
    let remaining = run
        .max_gateway_calls
        .map(|b| b.saturating_sub(result.total_lm_calls));
    let metered = MeteredBackend::new(lm, remaining);
    match ScoreFunction::test(task, &metered).score(&result.best_prompt) {
        Ok(acc) => TrialReport {
            trial,
            seed,
            status: TrialStatus::Completed,
            error: None,
            test_accuracy: Some(acc),
            result: Some(result),
            partial: Vec::new(),
        },
        Err(e) => failed(format!("test scoring: {e}"), result.per_iteration),
    }
}

/// Runs every trial of `config` and writes its reports under
/// `config.output_dir`.
///
/// Files: `trial_NNN.json` per trial, `trial_NNN.log.jsonl` per completed
/// trial, `iterations.csv` and `summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let task = load_task(&config.task)?;
    let gateway = build_gateway(config, &task)?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut trials = Vec::with_capacity(config.trials);
    for i in 0..config.trials {
        let report = run_trial(config, &task, gateway.backend.as_ref(), i);
        write_json(&out.join(format!("trial_{i:03}.json")), &report)?;
        if let Some(result) = &report.result {
            let path = out.join(format!("trial_{i:03}.log.jsonl"));
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            write_run_log(result, &mut w).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
        }
        trials.push(report);
    }
    if let Some((cache, path)) = &gateway.cache {
        if cache.mode() == CacheMode::Record {
            cache.save(path)?;
        }
    }

    write_iterations(&out.join("iterations.csv"), &trials)?;
    let summary = summarize(config, &task, &trials);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(ExperimentReport { trials, summary })
}

fn summarize(config: &ExperimentConfig, task: &TaskBinding, trials: &[TrialReport]) -> Summary {
    let test: Vec<f64> = trials.iter().filter_map(|t| t.test_accuracy).collect();
    let holdout: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.result.as_ref().map(|r| r.best_score))
        .collect();
    let failed = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Failed)
        .count();
    let mut warnings = config.warnings.clone();
    if failed > 0 {
        warnings.push(format!(
            "{failed} of {} trials failed; statistics cover completed trials only",
            trials.len()
        ));
    }
    let stats = mean_std(&test);
    Summary {
        task: task.name.clone(),
        trials: trials.len(),
        completed: trials.len() - failed,
        failed,
        seeds: trials.iter().map(|t| t.seed).collect(),
        mean_test_accuracy: stats.map(|s| s.0),
        std_test_accuracy: stats.map(|s| s.1),
        mean_best_holdout: mean_std(&holdout).map(|s| s.0),
        test_accuracies: test,
        warnings,
    }
}

#[derive(Serialize)]
struct IterationRow {
    trial: usize,
    iteration: usize,
    holdout_score: f64,
    selected_candidate_index: Option<usize>,
    cumulative_calls: u64,
    cumulative_tokens: u64,
}

fn write_iterations(path: &Path, trials: &[TrialReport]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for t in trials {
        for it in t.iterations() {
            w.serialize(IterationRow {
                trial: t.trial,
                iteration: it.iteration,
                holdout_score: it.holdout_score,
                selected_candidate_index: it.selected_candidate,
                cumulative_calls: it.cumulative.calls,
                cumulative_tokens: it.cumulative.total_tokens(),
            })?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

/// Runs one experiment per sweep value, each in its own subdirectory, and
/// writes `sweep.csv` ordered by value.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>, ExperimentError> {
    let Sweep { axis, values } = config.sweep.clone().ok_or(ExperimentError::NoSweep)?;
    let mut values = values;
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut point = config.clone();
        apply_axis(&mut point.run, axis, value)?;
        point.sweep = None;
        point.output_dir = config.output_dir.join(format!("{}_{value}", axis.name()));
        let report = run_experiment(&point)?;
        rows.push(SweepRow {
            axis: axis.name().into(),
            value,
            mean_test_accuracy: report.summary.mean_test_accuracy,
            std_test_accuracy: report.summary.std_test_accuracy,
            completed: report.summary.completed,
            failed: report.summary.failed,
        });
    }
    let path = config.output_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}
