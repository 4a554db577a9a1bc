use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fgsf_core::env::EnvKind;
use fgsf_core::fim::{Estimator, ScrubTarget};
use fgsf_core::harness::{analyze_log, sweep, Method, RunConfig, SweepAxis, Trainer};
use fgsf_core::pbdetect::{PhaseThresholds, SavGolSpec};
use fgsf_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "fgsf", version, about = "Fisher-guided selective forgetting for SAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write run.csv, result.json and config.toml.
    Train(TrainArgs),
    /// Detect memorization and reorganization phases in a run log.
    Analyze(AnalyzeArgs),
    /// Run a grid over one hyperparameter and several seeds.
    Sweep(SweepArgs),
}

/// Overrides applied on top of the configuration file.
#[derive(Args)]
struct RunFlags {
    /// TOML configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// baseline, fgsf, reset or gauss.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Gradient steps between scrubs.
    #[arg(long)]
    scrub_freq: Option<u64>,
    /// actor, critic or both.
    #[arg(long)]
    scrub_target: Option<String>,
    /// diag, kfac or ekfac.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    replay_ratio: Option<u64>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Gradient steps between log rows.
    #[arg(long)]
    log_every: Option<u64>,
    /// Environment steps between checkpoints; 0 disables them.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Write 0 in the wall_ms column so logs are reproducible byte for byte.
    #[arg(long)]
    no_wall_clock: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint with the configuration stored in it.
    #[arg(long, conflicts_with_all = ["config", "seed", "method", "env"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 51)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    polyorder: usize,
    /// Required peak to plateau ratio.
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    /// lambda, replay_ratio or target.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
}

fn parse_with<T>(v: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(v).ok_or_else(|| Error::InvalidConfig(format!("unknown {what} {v:?}")).into())
}

fn build_config(flags: &RunFlags, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(env) = &flags.env {
        cfg.env = EnvKind::parse(env)?;
    }
    if let Some(m) = &flags.method {
        cfg.method = Method::parse(m)?;
    }
    if let Some(l) = flags.lambda {
        cfg.scrub.lambda = l;
    }
    if let Some(f) = flags.scrub_freq {
        cfg.scrub.frequency = f;
    }
    if let Some(t) = &flags.scrub_target {
        cfg.scrub.target = parse_with(t, "scrub target", ScrubTarget::parse)?;
    }
    if let Some(e) = &flags.estimator {
        cfg.scrub.estimator = parse_with(e, "estimator", Estimator::parse)?;
    }
    if let Some(r) = flags.replay_ratio {
        cfg.sac.replay_ratio = r;
    }
    if let Some(s) = flags.steps {
        cfg.total_env_steps = Some(s);
    }
    if let Some(l) = flags.log_every {
        cfg.log_every = l;
    }
    if let Some(c) = flags.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if flags.no_wall_clock {
        cfg.wall_clock = false;
    }
    if let Some(out) = &flags.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => Trainer::load_checkpoint(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?,
        None => Trainer::new(build_config(&args.run, args.seed)?)?,
    };
    let outcome = trainer.run()?;
    let r = &outcome.result;
    println!("log: {}", outcome.csv_path.display());
    println!(
        "env_steps {} grad_steps {} episodes {} scrubs {} resets {}",
        r.env_steps, r.grad_steps, r.episodes, r.scrubs, r.resets
    );
    if let (Some(m), Some(s)) = (r.final_return_mean, r.final_return_std) {
        println!("final_return {m:.3} ± {s:.3}");
    }
    if let Some(e) = r.final_eval_mean {
        println!("final_eval {e:.3}");
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let spec = SavGolSpec::new(args.window, args.polyorder, 0)?;
    let thresholds = PhaseThresholds {
        rho: args.rho,
        ..PhaseThresholds::default()
    };
    let report = analyze_log(&args.log, &spec, &thresholds)?;
    print!("{}", report.render());
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let base = build_config(&args.run, None)?;
    let axis = SweepAxis::parse(&args.axis, &args.values)?;
    let seeds = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidConfig(format!("bad seed list: {e}")))?;
    let report = sweep(&base, &axis, &seeds)?;
    print!("{}", report.render());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_)) => EXIT_CONFIG,
        Some(Error::Io(_)) => EXIT_IO,
        Some(_) => EXIT_RUNTIME,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
