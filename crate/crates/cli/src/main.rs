use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tsgdm_cli::{parse_config_with_overrides, run_experiment, run_sweep, ExperimentConfig};
use tsgdm_core::rng::RandomStream;
use tsgdm_core::variance::variance_report;

#[derive(Parser)]
#[command(
    name = "tsgdm",
    version,
    about = "Prompt optimization with momentum-smoothed textual gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of an experiment.
    Run(RunArgs),
    /// Repeat an experiment over each value of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// batch_size, train_size, alpha or temperature.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Compare the smoothed estimator's MSE with theory by simulation.
    Variance(VarianceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override any config field, e.g. `--set generation.alpha=0.3`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trials: Option<i64>,
    #[arg(long)]
    seed_base: Option<i64>,
    #[arg(long)]
    output_dir: Option<String>,
    /// H0, H1 or custom.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    iterations: Option<i64>,
    #[arg(long)]
    batch_size: Option<i64>,
    #[arg(long)]
    candidates: Option<i64>,
    #[arg(long)]
    max_gateway_calls: Option<i64>,
    /// record, replay or passthrough.
    #[arg(long)]
    cache: Option<String>,
    #[arg(long)]
    cache_path: Option<String>,
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50")]
    horizons: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tsgdm-variance")]
    output_dir: PathBuf,
}

fn parse_set(item: &str) -> Result<(String, toml::Value)> {
    let (path, raw) = item
        .split_once('=')
        .with_context(|| format!("--set expects PATH=VALUE, got {item:?}"))?;
    // bare words are taken as strings
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path.trim().to_string(), value))
}

fn load_config(args: &RunArgs, extra: Vec<(String, toml::Value)>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut overrides = args
        .set
        .iter()
        .map(|s| parse_set(s))
        .collect::<Result<Vec<_>>>()?;
    let typed = [
        ("trials", args.trials.map(toml::Value::Integer)),
        ("seed_base", args.seed_base.map(toml::Value::Integer)),
        (
            "output_dir",
            args.output_dir.clone().map(toml::Value::String),
        ),
        ("run.preset", args.preset.clone().map(toml::Value::String)),
        ("generation.alpha", args.alpha.map(toml::Value::Float)),
        (
            "generation.temperature",
            args.temperature.map(toml::Value::Float),
        ),
        (
            "run.total_iterations",
            args.iterations.map(toml::Value::Integer),
        ),
        ("run.batch_size", args.batch_size.map(toml::Value::Integer)),
        (
            "generation.candidates",
            args.candidates.map(toml::Value::Integer),
        ),
        (
            "run.max_gateway_calls",
            args.max_gateway_calls.map(toml::Value::Integer),
        ),
        ("backend.cache", args.cache.clone().map(toml::Value::String)),
        (
            "backend.cache_path",
            args.cache_path.clone().map(toml::Value::String),
        ),
    ];
    overrides.extend(
        typed
            .into_iter()
            .filter_map(|(p, v)| v.map(|v| (p.to_string(), v))),
    );
    overrides.extend(extra);
    let config = parse_config_with_overrides(&text, &overrides)
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    for w in &config.warnings {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let config = load_config(&args, Vec::new())?;
    let report = run_experiment(&config)?;
    let s = &report.summary;
    for t in &report.trials {
        match (&t.error, t.test_accuracy) {
            (Some(e), _) => println!("trial {} (seed {}): failed: {e}", t.trial, t.seed),
            (None, Some(acc)) => println!(
                "trial {} (seed {}): test accuracy {acc:.4}",
                t.trial, t.seed
            ),
            (None, None) => {}
        }
    }
    if let (Some(m), Some(sd)) = (s.mean_test_accuracy, s.std_test_accuracy) {
        println!(
            "{}: {}/{} trials, test accuracy {m:.4} ± {sd:.4}",
            s.task, s.completed, s.trials
        );
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    println!("reports written to {}", config.output_dir.display());
    Ok(if report.all_completed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_sweep(args: RunArgs, axis: Option<String>, values: Option<Vec<f64>>) -> Result<ExitCode> {
    let mut extra = Vec::new();
    if let Some(a) = axis {
        extra.push(("sweep.axis".to_string(), toml::Value::String(a)));
    }
    if let Some(v) = values {
        extra.push((
            "sweep.values".to_string(),
            toml::Value::Array(v.into_iter().map(toml::Value::Float).collect()),
        ));
    }
    let config = load_config(&args, extra)?;
    if config.sweep.is_none() {
        bail!("no sweep: add a [sweep] table or pass --axis and --values");
    }
    let rows = run_sweep(&config)?;
    println!(
        "{:>12} {:>10} {:>10} {:>6}",
        rows[0].axis, "mean", "std", "failed"
    );
    let mut failed = 0;
    for r in &rows {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:>12} {:>10} {:>10} {:>6}",
            r.value,
            fmt(r.mean_test_accuracy),
            fmt(r.std_test_accuracy),
            r.failed
        );
        failed += r.failed;
    }
    println!(
        "table written to {}",
        config.output_dir.join("sweep.csv").display()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_variance(args: VarianceArgs) -> Result<ExitCode> {
    let report = variance_report(
        &args.alphas,
        &args.horizons,
        args.sigma,
        args.trials,
        &RandomStream::new(args.seed),
    )?;
    fs::create_dir_all(&args.output_dir)?;
    let csv_path = args.output_dir.join("variance.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    report.write_summary(fs::File::create(
        args.output_dir.join("variance_summary.json"),
    )?)?;
    println!(
        "{:>6} {:>4} {:>12} {:>12} {:>10} {:>8}",
        "alpha", "t", "theory", "empirical", "std_err", "baseline"
    );
    for r in &report.rows {
        println!(
            "{:>6} {:>4} {:>12.6} {:>12.6} {:>10.6} {:>8.4}{}",
            r.alpha,
            r.t,
            r.theory_mse,
            r.empirical_mse,
            r.std_error,
            r.baseline_mse,
            if r.flagged { "  !" } else { "" }
        );
    }
    if report.flagged() > 0 {
        eprintln!(
            "warning: {} cells deviate from theory by more than 4 standard errors",
            report.flagged()
        );
    }
    println!("table written to {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { run, axis, values } => cmd_sweep(run, axis, values),
        Command::Variance(args) => cmd_variance(args),
    }
}
