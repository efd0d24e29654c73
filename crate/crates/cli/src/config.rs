//! Experiment configuration: TOML parsing, defaults and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tsgdm_core::gateway::{CacheMode, RemoteConfig, WireFormat};
use tsgdm_core::optimizer::{GenerationMode, GenerationParams, HypothesisPreset, RunConfig};
use tsgdm_core::template::TemplateText;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
}

impl ConfigError {
    fn field(path: &str, message: impl Into<String>) -> Self {
        Self::Field {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Dotted path of the offending field, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Field { path, .. } => Some(path),
            Self::UnknownField(path) => Some(path),
            Self::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub task: TaskSpec,
    pub backend: BackendSpec,
    pub trials: usize,
    pub seed_base: u64,
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    /// Unknown fields ignored because strict mode was off.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSpec {
    /// `synthetic`, a preset name, or a free-form name for a custom task.
    pub name: String,
    pub train: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub initial_prompt: Option<String>,
    pub label_set: Option<Vec<String>>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub train: usize,
    pub holdout: usize,
    pub test: usize,
    pub cue: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 200,
            holdout: 20,
            test: 20,
            cue: "CUE".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BackendKind {
    Scripted,
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub cache: Option<CacheSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheSpec {
    pub mode: CacheMode,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    TrainSize,
    Alpha,
    Temperature,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::BatchSize => "batch_size",
            Self::TrainSize => "train_size",
            Self::Alpha => "alpha",
            Self::Temperature => "temperature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawConfig {
    strict: Option<bool>,
    trials: Option<usize>,
    seed_base: Option<u64>,
    output_dir: Option<PathBuf>,
    task: Option<RawTask>,
    backend: Option<RawBackend>,
    run: RawRun,
    generation: RawGeneration,
    sweep: Option<Sweep>,
}

#[derive(Debug, Deserialize)]
struct RawTask {
    name: String,
    train: Option<PathBuf>,
    holdout: Option<PathBuf>,
    test: Option<PathBuf>,
    initial_prompt: Option<String>,
    label_set: Option<Vec<String>>,
    #[serde(default)]
    synthetic: SyntheticSpec,
}

#[derive(Debug, Deserialize)]
struct RawBackend {
    kind: String,
    base_url: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: Option<u64>,
    max_attempts: Option<u32>,
    wire: Option<WireFormat>,
    cache: Option<CacheMode>,
    cache_path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawRun {
    total_iterations: Option<usize>,
    batch_size: Option<usize>,
    train_size: Option<usize>,
    patience: Option<usize>,
    preset: Option<String>,
    use_momentum: Option<bool>,
    with_replacement: Option<bool>,
    max_gateway_calls: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawGeneration {
    mode: Option<String>,
    alpha: Option<f64>,
    max_total_tokens: Option<u32>,
    block_tokens: Option<u32>,
    temperature: Option<f64>,
    candidates: Option<usize>,
    refine_template: Option<String>,
    analyze_template: Option<String>,
    concat_template: Option<String>,
    concat_window: Option<usize>,
    gradient_max_tokens: Option<u32>,
}

/// Parses and validates a TOML experiment document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with_overrides(text, &[])
}

/// As [`parse_config`], with `(dotted.path, value)` pairs written into the
/// document before validation. Command-line flags use this.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[(String, toml::Value)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    for (path, value) in overrides {
        set_path(&mut doc, path, value.clone())?;
    }
    let strict = match doc.get("strict") {
        None => true,
        Some(toml::Value::Boolean(b)) => *b,
        Some(_) => return Err(ConfigError::field("strict", "expected a boolean")),
    };

    let mut ignored = Vec::new();
    let mut track = serde_path_to_error::Track::new();
    let de = serde_path_to_error::Deserializer::new(toml::Value::Table(doc), &mut track);
    let raw: RawConfig = serde_ignored::deserialize(de, |p| ignored.push(p.to_string()))
        .map_err(|e| ConfigError::field(&track.path().to_string(), e.message()))?;
    if strict {
        if let Some(first) = ignored.into_iter().next() {
            return Err(ConfigError::UnknownField(first));
        }
        ignored = Vec::new();
    }
    let mut config = resolve(raw)?;
    config.warnings = ignored
        .into_iter()
        .map(|p| format!("ignored unknown field `{p}`"))
        .collect();
    Ok(config)
}

fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        return Err(ConfigError::field(path, "empty override path"));
    };
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::field(path, format!("`{part}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let task = raw
        .task
        .ok_or_else(|| ConfigError::field("task", "missing task section"))?;
    let backend = raw
        .backend
        .ok_or_else(|| ConfigError::field("backend", "missing backend section"))?;
    let trials = raw.trials.unwrap_or(1);
    if trials == 0 {
        return Err(ConfigError::field("trials", "must be at least 1"));
    }

    let run = resolve_run(raw.run, raw.generation)?;
    let task = resolve_task(task)?;
    let backend = resolve_backend(backend)?;

    if let Some(sweep) = &raw.sweep {
        if sweep.values.is_empty() {
            return Err(ConfigError::field("sweep.values", "must be nonempty"));
        }
        if sweep.axis == SweepAxis::Temperature && run.hypothesis_preset != HypothesisPreset::Custom
        {
            return Err(ConfigError::field(
                "sweep.axis",
                "a temperature sweep needs run.preset = \"custom\"",
            ));
        }
        let mut probe = run.clone();
        for &v in &sweep.values {
            apply_axis(&mut probe, sweep.axis, v)?;
        }
    }

    Ok(ExperimentConfig {
        run,
        task,
        backend,
        trials,
        seed_base: raw.seed_base.unwrap_or(0),
        sweep: raw.sweep,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("tsgdm-out")),
        warnings: Vec::new(),
    })
}

fn parse_preset(s: &str) -> Result<HypothesisPreset, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "h0" => Ok(HypothesisPreset::H0),
        "h1" => Ok(HypothesisPreset::H1),
        "custom" => Ok(HypothesisPreset::Custom),
        _ => Err(ConfigError::field(
            "run.preset",
            format!("expected H0, H1 or custom, got {s:?}"),
        )),
    }
}

fn parse_mode(s: &str) -> Result<GenerationMode, ConfigError> {
    match s {
        "case1" | "meta_prompt" => Ok(GenerationMode::Case1MetaPrompt),
        "case2" | "gradient" => Ok(GenerationMode::Case2Gradient),
        "concat" | "concat_baseline" => Ok(GenerationMode::ConcatBaseline),
        _ => Err(ConfigError::field(
            "generation.mode",
            format!("expected case1, case2 or concat, got {s:?}"),
        )),
    }
}

fn resolve_run(r: RawRun, g: RawGeneration) -> Result<RunConfig, ConfigError> {
    let mode = g.mode.as_deref().map(parse_mode).transpose()?;
    let mut gen = match mode {
        Some(GenerationMode::Case2Gradient) => GenerationParams::case2(),
        Some(GenerationMode::ConcatBaseline) => GenerationParams::concat_baseline(),
        _ => GenerationParams::default(),
    };
    if let Some(v) = g.alpha {
        if !(0.0..=1.0).contains(&v) {
            return Err(ConfigError::field(
                "generation.alpha",
                format!("must lie in [0, 1], got {v}"),
            ));
        }
        gen.alpha = v;
    }
    if let Some(v) = g.max_total_tokens {
        if v == 0 {
            return Err(ConfigError::field(
                "generation.max_total_tokens",
                "must be positive",
            ));
        }
        gen.max_total_tokens = v;
    }
    if let Some(v) = g.block_tokens {
        gen.block_tokens = v;
    }
    if gen.block_tokens == 0 || gen.block_tokens > gen.max_total_tokens {
        return Err(ConfigError::field(
            "generation.block_tokens",
            format!("must lie in 1..={}", gen.max_total_tokens),
        ));
    }
    if let Some(v) = g.candidates {
        if v == 0 {
            return Err(ConfigError::field(
                "generation.candidates",
                "must be positive",
            ));
        }
        gen.candidates = v;
    }
    if let Some(v) = g.temperature {
        if !v.is_finite() || v < 0.0 {
            return Err(ConfigError::field(
                "generation.temperature",
                "must be finite and nonnegative",
            ));
        }
    }
    if let Some(t) = g.refine_template {
        gen.refine_template = TemplateText::new(t);
    }
    if let Some(t) = g.analyze_template {
        gen.analyze_template = Some(TemplateText::new(t));
    }
    if let Some(t) = g.concat_template {
        gen.concat_template = TemplateText::new(t);
    }
    if let Some(w) = g.concat_window {
        gen.concat_window = Some(w);
    }
    if let Some(v) = g.gradient_max_tokens {
        gen.gradient_max_tokens = v;
    }

    let preset = r.preset.as_deref().map(parse_preset).transpose()?;
    let mut run = RunConfig {
        generation: gen,
        ..RunConfig::default()
    };
    if let Some(p) = preset {
        run = run.with_preset(p);
    }
    if let Some(v) = g.temperature {
        run.generation.temperature = v;
    }
    if let Some(v) = r.patience {
        if v == 0 {
            return Err(ConfigError::field("run.patience", "must be positive"));
        }
        run.patience = v;
    }
    if let Some((temperature, patience)) = run.hypothesis_preset.settings() {
        if run.generation.temperature != temperature {
            return Err(ConfigError::field(
                "generation.temperature",
                format!("preset {:?} fixes temperature at {temperature}; set run.preset = \"custom\" to change it", run.hypothesis_preset),
            ));
        }
        if run.patience != patience {
            return Err(ConfigError::field(
                "run.patience",
                format!("preset {:?} fixes patience at {patience}; set run.preset = \"custom\" to change it", run.hypothesis_preset),
            ));
        }
    }
    if let Some(v) = r.total_iterations {
        run.total_iterations = v;
    }
    if let Some(v) = r.batch_size {
        if v == 0 {
            return Err(ConfigError::field("run.batch_size", "must be positive"));
        }
        run.batch_size = v;
    }
    if let Some(v) = r.train_size {
        if v == 0 {
            return Err(ConfigError::field("run.train_size", "must be positive"));
        }
        run.train_size = Some(v);
    }
    if let Some(v) = r.use_momentum {
        run.use_momentum = v;
    }
    if let Some(v) = r.with_replacement {
        run.with_replacement = v;
    }
    if let Some(v) = r.max_gateway_calls {
        run.max_gateway_calls = Some(v);
    }
    run.validate()
        .map_err(|e| ConfigError::field("generation", e.to_string()))?;
    Ok(run)
}

fn resolve_task(t: RawTask) -> Result<TaskSpec, ConfigError> {
    let is_synthetic = t.name.eq_ignore_ascii_case("synthetic");
    if !is_synthetic {
        for (field, value) in [
            ("task.train", &t.train),
            ("task.holdout", &t.holdout),
            ("task.test", &t.test),
        ] {
            if value.is_none() {
                return Err(ConfigError::field(field, "dataset path required"));
            }
        }
        if tsgdm_core::task::preset(&t.name).is_none() {
            if t.label_set.is_none() {
                return Err(ConfigError::field(
                    "task.label_set",
                    "required for tasks without a preset",
                ));
            }
            if t.initial_prompt.is_none() {
                return Err(ConfigError::field(
                    "task.initial_prompt",
                    "required for tasks without a preset",
                ));
            }
        }
    }
    let s = &t.synthetic;
    if is_synthetic && (s.train == 0 || s.holdout == 0) {
        return Err(ConfigError::field(
            "task.synthetic",
            "train and holdout sizes must be positive",
        ));
    }
    Ok(TaskSpec {
        name: t.name,
        train: t.train,
        holdout: t.holdout,
        test: t.test,
        initial_prompt: t.initial_prompt,
        label_set: t.label_set,
        synthetic: t.synthetic,
    })
}

fn resolve_backend(b: RawBackend) -> Result<BackendSpec, ConfigError> {
    let kind = match b.kind.as_str() {
        "scripted" => BackendKind::Scripted,
        "remote" => {
            let base_url = b.base_url.ok_or_else(|| {
                ConfigError::field("backend.base_url", "required for a remote backend")
            })?;
            let model = b.model.ok_or_else(|| {
                ConfigError::field("backend.model", "required for a remote backend")
            })?;
            let mut c = RemoteConfig::new(base_url, model);
            if let Some(v) = b.api_key_env {
                c.api_key_env = v;
            }
            if let Some(v) = b.timeout_secs {
                c.timeout_secs = v;
            }
            if let Some(v) = b.max_attempts {
                if v == 0 {
                    return Err(ConfigError::field(
                        "backend.max_attempts",
                        "must be positive",
                    ));
                }
                c.max_attempts = v;
            }
            if let Some(v) = b.wire {
                c.wire = v;
            }
            BackendKind::Remote(c)
        }
        other => {
            return Err(ConfigError::field(
                "backend.kind",
                format!("expected scripted or remote, got {other:?}"),
            ))
        }
    };
    let cache = match (b.cache, b.cache_path) {
        (None, None) => None,
        (Some(mode), Some(path)) => Some(CacheSpec { mode, path }),
        (None, Some(path)) => Some(CacheSpec {
            mode: CacheMode::Record,
            path,
        }),
        (Some(CacheMode::Passthrough), None) => None,
        (Some(_), None) => {
            return Err(ConfigError::field(
                "backend.cache_path",
                "required when caching",
            ))
        }
    };
    Ok(BackendSpec { kind, cache })
}

/// Sets one sweep axis on `run`, validating the value.
pub fn apply_axis(run: &mut RunConfig, axis: SweepAxis, value: f64) -> Result<(), ConfigError> {
    let count = |v: f64| -> Result<usize, ConfigError> {
        if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
            Ok(v as usize)
        } else {
            Err(ConfigError::field(
                "sweep.values",
                format!("{} needs positive integers, got {v}", axis.name()),
            ))
        }
    };
    match axis {
        SweepAxis::BatchSize => run.batch_size = count(value)?,
        SweepAxis::TrainSize => run.train_size = Some(count(value)?),
        SweepAxis::Alpha => {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::field(
                    "sweep.values",
                    format!("alpha must lie in [0, 1], got {value}"),
                ));
            }
            run.generation.alpha = value;
        }
        SweepAxis::Temperature => {
            if !value.is_finite() || value < 0.0 {
                return Err(ConfigError::field(
                    "sweep.values",
                    format!("bad temperature {value}"),
                ));
            }
            run.generation.temperature = value;
        }
    }
    run.validate()
        .map_err(|e| ConfigError::field("sweep.values", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[task]\nname = \"synthetic\"\n[backend]\nkind = \"scripted\"\n";

    #[test]
    fn defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.run.generation.max_total_tokens, 100);
        assert_eq!(c.run.generation.candidates, 20);
        assert_eq!(c.run.batch_size, 20);
        assert_eq!(c.run.generation.temperature, 0.7);
        assert_eq!(c.run.patience, 2);
        assert_eq!(c.run.hypothesis_preset, HypothesisPreset::H0);
        assert_eq!(c.trials, 1);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn h1_preset() {
        let c = parse_config(&format!("{MINIMAL}[run]\npreset = \"H1\"\n")).unwrap();
        assert_eq!(c.run.generation.temperature, 1.1);
        assert_eq!(c.run.patience, 5);
    }

    #[test]
    fn alpha_out_of_range() {
        let e = parse_config(&format!("{MINIMAL}[generation]\nalpha = 1.5\n")).unwrap_err();
        assert_eq!(e.path(), Some("generation.alpha"));
    }

    #[test]
    fn type_errors_carry_path() {
        let e = parse_config(&format!("{MINIMAL}[generation]\nalpha = \"high\"\n")).unwrap_err();
        assert_eq!(e.path(), Some("generation.alpha"), "{e}");
    }

    #[test]
    fn preset_conflict() {
        let e = parse_config(&format!("{MINIMAL}[generation]\ntemperature = 1.0\n")).unwrap_err();
        assert_eq!(e.path(), Some("generation.temperature"));
        let c = parse_config(&format!(
            "{MINIMAL}[run]\npreset = \"custom\"\npatience = 3\n[generation]\ntemperature = 1.0\n"
        ))
        .unwrap();
        assert_eq!((c.run.generation.temperature, c.run.patience), (1.0, 3));
        let c = parse_config(&format!("{MINIMAL}[generation]\ntemperature = 0.7\n")).unwrap();
        assert_eq!(c.run.generation.temperature, 0.7);
    }

    #[test]
    fn strict_mode() {
        let text = format!("{MINIMAL}[run]\nbatchsize = 3\n");
        assert_eq!(
            parse_config(&text).unwrap_err(),
            ConfigError::UnknownField("run.batchsize".into())
        );
        let c = parse_config(&format!("strict = false\n{text}")).unwrap();
        assert_eq!(
            c.warnings,
            vec!["ignored unknown field `run.batchsize`".to_string()]
        );
    }

    #[test]
    fn overrides_win() {
        let c = parse_config_with_overrides(
            MINIMAL,
            &[
                ("generation.alpha".into(), toml::Value::Float(0.3)),
                ("trials".into(), toml::Value::Integer(4)),
            ],
        )
        .unwrap();
        assert_eq!(c.run.generation.alpha, 0.3);
        assert_eq!(c.trials, 4);
    }

    #[test]
    fn missing_sections_and_bad_values() {
        assert_eq!(parse_config("").unwrap_err().path(), Some("task"));
        let bad = [
            ("trials = 0\n", "trials"),
            ("[run]\nbatch_size = 0\n", "run.batch_size"),
            ("[run]\npreset = \"H2\"\n", "run.preset"),
            (
                "[generation]\nblock_tokens = 200\n",
                "generation.block_tokens",
            ),
            ("[generation]\nmode = \"case3\"\n", "generation.mode"),
            ("[sweep]\naxis = \"alpha\"\nvalues = []\n", "sweep.values"),
            (
                "[sweep]\naxis = \"batch_size\"\nvalues = [2.5]\n",
                "sweep.values",
            ),
            (
                "[sweep]\naxis = \"temperature\"\nvalues = [0.5]\n",
                "sweep.axis",
            ),
        ];
        for (extra, path) in bad {
            let e = parse_config(&format!("{extra}{MINIMAL}")).unwrap_err();
            assert_eq!(e.path(), Some(path), "{extra}: {e}");
        }
        let e =
            parse_config("[task]\nname = \"trec\"\n[backend]\nkind = \"scripted\"\n").unwrap_err();
        assert_eq!(e.path(), Some("task.train"));
        let e = parse_config("[task]\nname = \"synthetic\"\n[backend]\nkind = \"remote\"\n")
            .unwrap_err();
        assert_eq!(e.path(), Some("backend.base_url"));
        let e = parse_config(
            "[task]\nname = \"synthetic\"\n[backend]\nkind = \"scripted\"\ncache = \"replay\"\n",
        )
        .unwrap_err();
        assert_eq!(e.path(), Some("backend.cache_path"));
    }

    #[test]
    fn case2_mode_brings_templates() {
        let c = parse_config(&format!("{MINIMAL}[generation]\nmode = \"case2\"\n")).unwrap();
        assert_eq!(c.run.generation.mode, GenerationMode::Case2Gradient);
        assert!(c.run.generation.analyze_template.is_some());
    }
}
