use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mace_core::config::{parse_override, RunConfig};
use mace_core::oracle::suite::{self, Identity, SuiteConfig};
use mace_core::rollout::Behaviour;
use mace_core::run;
use mace_core::Error;

/// Influence-based multi-agent exploration: training, evaluation and exact checks.
#[derive(Parser)]
#[command(name = "mace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics, checkpoints and the aggregate curve.
    Train(TrainArgs),
    /// Run one batch from a checkpoint without learning and print its report.
    Eval(EvalArgs),
    /// Check the exact identities on seeded random MDPs.
    OracleCheck(OracleArgs),
    /// Write per-agent EITI/EDTI heatmap grids from a checkpoint.
    ExportHeatmaps(HeatmapArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from this task's defaults instead of a config file.
    #[arg(long, conflicts_with = "config")]
    task: Option<String>,
    /// Shaping method used with --task.
    #[arg(long, default_value = "eiti", requires = "task")]
    method: String,
    /// Override a field by dotted path, e.g. `--set learner.lr=0.5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output directory; relative paths are taken under $MACE_OUTPUT_ROOT when set.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Continue each seed from its checkpoint when one exists.
    #[arg(long)]
    resume: bool,
    /// Train seeds concurrently.
    #[arg(long)]
    parallel_seeds: bool,
    #[arg(long, env = "MACE_OUTPUT_ROOT", hide_env_values = true)]
    output_root: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    envs: usize,
    /// Action choice: sample, greedy or uniform.
    #[arg(long, default_value = "sample")]
    behaviour: Behaviour,
}

#[derive(Args)]
struct OracleArgs {
    /// Restrict to these identities (repeatable); `none` runs an empty suite.
    #[arg(long = "identity")]
    identities: Vec<String>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace every identity's tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `heatmaps/` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    envs: usize,
    /// Action choice: sample, greedy or uniform (covers the whole map).
    #[arg(long, default_value = "uniform")]
    behaviour: Behaviour,
}

/// Some oracle identity exceeded its tolerance.
struct Failed;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<Result<(), Failed>> {
    match cmd {
        Command::Train(a) => train(a).map(Ok),
        Command::Eval(a) => eval(a).map(Ok),
        Command::OracleCheck(a) => oracle_check(a),
        Command::ExportHeatmaps(a) => export_heatmaps(a).map(Ok),
    }
}

fn resolve(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn load_config(a: &TrainArgs) -> Result<RunConfig, Error> {
    let mut overrides = a.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = &a.output {
        overrides.push(("output_dir".into(), serde_json::Value::String(out.display().to_string()).to_string()));
    }
    if a.parallel_seeds {
        overrides.push(("parallel_seeds".into(), "true".into()));
    }
    match (&a.config, &a.task) {
        (Some(path), _) => RunConfig::from_file(path, &overrides),
        (None, Some(task)) => {
            let doc = serde_json::json!({ "defaults_from_task": task, "method": a.method });
            RunConfig::from_json_with(&doc.to_string(), &overrides)
        }
        (None, None) => Err(Error::Config("either --config or --task is required".into())),
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a)?;
    cfg.output_dir = resolve(a.output_root.as_deref(), &cfg.output_dir);
    log::info!(
        "training {} with {} on {} seed(s), {} updates -> {}",
        cfg.task.task,
        cfg.shaping.method,
        cfg.seeds.len(),
        cfg.updates,
        cfg.output_dir.display()
    );
    let summary = run::train(&cfg, a.resume)?;
    if let Some(last) = summary.aggregate.last() {
        println!(
            "update {}: mean return {:.2} ± {:.2} over {} seed(s)",
            last.update, last.mean_return, last.ci95, last.seeds
        );
    }
    println!("{}", cfg.output_dir.join(run::AGGREGATE_CSV).display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let report = run::evaluate(&a.checkpoint, a.envs, a.behaviour)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn oracle_check(a: OracleArgs) -> anyhow::Result<Result<(), Failed>> {
    let identities = if a.identities.iter().any(|s| s == "none") {
        Vec::new()
    } else if a.identities.is_empty() {
        Identity::ALL.to_vec()
    } else {
        a.identities.iter().map(|s| s.parse()).collect::<Result<_, Error>>()?
    };
    if let Some(t) = a.tolerance {
        anyhow::ensure!(t >= 0.0, Error::Config("tolerance must be >= 0".into()));
    }
    let cfg = SuiteConfig {
        identities,
        instances: a.instances,
        seed: a.seed,
        tolerance: a.tolerance,
        ..SuiteConfig::default()
    };
    let report = suite::run(&cfg)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(if report.passed { Ok(()) } else { Err(Failed) })
}

fn export_heatmaps(a: HeatmapArgs) -> anyhow::Result<()> {
    let out = match a.out {
        Some(o) => o,
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join("heatmaps"),
    };
    let (heat, files) = run::export_heatmaps(&a.checkpoint, a.envs, a.behaviour, &out)
        .with_context(|| format!("exporting heatmaps from {}", a.checkpoint.display()))?;
    println!("{}x{} grids for {} agent(s):", heat.rows, heat.cols, heat.agents());
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
