//! Batch command-line surface of the laboratory.
//!
//! Subcommands: `train` (planning-and-learning or plain DQN), `eval`
//! (greedy rollouts of a checkpoint or the car-following benchmark),
//! `validate-model` (one-step-predictor error report), and `sweep`
//! (independent training runs across seeds, one thread and one output
//! subdirectory each).
//!
//! Human-readable progress goes to stderr; result files never contain
//! wall-clock readings, so a rerun with the same config and seed is
//! byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use platoon_lab::config::RunConfig;
use platoon_lab::dyna::{self, PolicySource};
use platoon_lab::error::{Error, Result};
use platoon_lab::outputs::{render_validate_table, EvalWriter, RunWriter, ValidateWriter};

/// Environment variable that overrides the output root when `--out` is
/// not given.
const OUT_ENV_VAR: &str = "PLATOON_LAB_OUT";

#[derive(Parser)]
#[command(
    name = "platoon-lab",
    about = "Traffic-control laboratory: a speed-controlled vehicle platoon on a lane-drop corridor",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, series, and checkpoints.
    Train(TrainArgs),
    /// Greedy evaluation rollouts of a trained checkpoint or the
    /// car-following benchmark.
    Eval(EvalArgs),
    /// Measure the one-step predictor against the simulator, with adapted
    /// and frozen parameters.
    ValidateModel(ValidateArgs),
    /// Run independent training seeds concurrently, one subdirectory each.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonTrainArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the environment-step budget from the config.
    #[arg(long)]
    steps: Option<u64>,
    /// Override the number of model-based updates per real step.
    #[arg(long)]
    planning: Option<usize>,
    /// Training variant: planning-and-learning, or the plain DQN loop.
    #[arg(long, value_parser = ["dyna", "dqn"], default_value = "dyna")]
    algo: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Override the root seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $PLATOON_LAB_OUT, then the config's
    /// run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Q-network checkpoint to evaluate greedily.
    #[arg(long, conflicts_with = "krauss", required_unless_present = "krauss")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the built-in car-following benchmark instead of a
    /// checkpoint.
    #[arg(long)]
    krauss: bool,
    /// Environment seeds, comma-separated (default: the config's seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory (default: $PLATOON_LAB_OUT, then the config's
    /// run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seeds, comma-separated; each runs its own validation (into
    /// seed-N subdirectories when more than one is given).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Control steps to accumulate, spanning episodes as needed.
    #[arg(long, default_value_t = 200)]
    steps: u64,
    /// Output directory (default: $PLATOON_LAB_OUT, then the config's
    /// run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Root seeds, comma-separated; each seed trains independently in
    /// out/seed-N.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Output root (default: $PLATOON_LAB_OUT, then the config's
    /// run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ValidateModel(args) => cmd_validate(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// `--out` beats the environment variable beats the config's out_dir.
fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir))
}

/// Apply the shared training overrides and re-validate.
fn apply_train_overrides(cfg: &mut RunConfig, common: &CommonTrainArgs) -> Result<()> {
    if let Some(steps) = common.steps {
        cfg.train.max_env_steps = steps;
    }
    if let Some(planning) = common.planning {
        cfg.agent.planning_steps = planning;
    }
    cfg.validate()
}

fn train_once(cfg: &RunConfig, algo: &str, out: &Path) -> Result<dyna::RunMetrics> {
    let mut writer = RunWriter::create(out)?;
    let metrics = match algo {
        "dqn" => dyna::train_plain_dqn(cfg, &mut writer)?,
        _ => dyna::train(cfg, &mut writer)?,
    };
    writer.finish()?;
    Ok(metrics)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.common.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    apply_train_overrides(&mut cfg, &args.common)?;
    let out = resolve_out(args.out, &cfg);

    let started = Instant::now();
    let metrics = train_once(&cfg, &args.common.algo, &out)?;
    eprintln!(
        "trained {} episodes ({} env steps, {} real + {} virtual updates) in {:.1}s",
        metrics.episodes,
        metrics.total_env_steps,
        metrics.real_updates,
        metrics.virtual_updates,
        started.elapsed().as_secs_f64()
    );
    match metrics.first_success_env_step {
        Some(step) => eprintln!("first completed episode at env step {step}"),
        None => eprintln!("no episode completed without timing out"),
    }
    eprintln!("results in {}", out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let out = resolve_out(args.out, &cfg);
    let seeds = if args.seeds.is_empty() { vec![cfg.run.seed] } else { args.seeds.clone() };
    let source = match args.checkpoint {
        // A training run's output directory is accepted as shorthand for
        // the network file inside it.
        Some(path) if path.is_dir() => {
            PolicySource::Checkpoint(path.join(dyna::QNET_FILE))
        }
        Some(path) => PolicySource::Checkpoint(path),
        None => PolicySource::Krauss,
    };

    let started = Instant::now();
    let mut writer = EvalWriter::create(&out)?;
    let outcomes = dyna::evaluate(&cfg, &source, &seeds, &mut writer)?;
    writer.finish()?;
    let mean_fuel = outcomes.iter().map(|o| o.fuel_l).sum::<f64>() / outcomes.len() as f64;
    eprintln!(
        "evaluated {} seed(s) in {:.1}s; mean fuel {:.2} L; table in {}",
        outcomes.len(),
        started.elapsed().as_secs_f64(),
        mean_fuel,
        out.join("eval.csv").display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let out = resolve_out(args.out, &cfg);
    let seeds = if args.seeds.is_empty() { vec![cfg.run.seed] } else { args.seeds.clone() };

    let started = Instant::now();
    for &seed in &seeds {
        let dir = if seeds.len() == 1 { out.clone() } else { out.join(format!("seed-{seed}")) };
        let mut writer = ValidateWriter::create(&dir)?;
        let summary = dyna::validate_model(&cfg, seed, args.steps, &mut writer)?;
        writer.finish()?;
        println!("seed {seed}, {} steps:", summary.steps);
        print!("{}", render_validate_table(&summary));
    }
    eprintln!(
        "validated {} seed(s) in {:.1}s; reports in {}",
        seeds.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.common.config)?;
    apply_train_overrides(&mut cfg, &args.common)?;
    let out = resolve_out(args.out, &cfg);

    let started = Instant::now();
    let handles: Vec<_> = args
        .seeds
        .iter()
        .map(|&seed| {
            let mut run_cfg = cfg.clone();
            run_cfg.run.seed = seed;
            let dir = out.join(format!("seed-{seed}"));
            let algo = args.common.algo.clone();
            std::thread::spawn(move || -> Result<(u64, dyna::RunMetrics)> {
                let metrics = train_once(&run_cfg, &algo, &dir)?;
                Ok((seed, metrics))
            })
        })
        .collect();

    let mut first_error: Option<Error> = None;
    for handle in handles {
        match handle.join().expect("training thread panicked") {
            Ok((seed, metrics)) => {
                let success = metrics
                    .first_success_env_step
                    .map(|s| format!("first success at env step {s}"))
                    .unwrap_or_else(|| "no completed episode".to_string());
                eprintln!(
                    "seed {seed}: {} episodes, {} env steps, {success}",
                    metrics.episodes, metrics.total_env_steps
                );
            }
            Err(e) => {
                eprintln!("error: {e}");
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    eprintln!(
        "sweep of {} seed(s) finished in {:.1}s; results in {}",
        args.seeds.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
