//! `marl`: train populations, evaluate checkpoints on scenarios, aggregate
//! results into tables.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use marl_core::checkpoint::load_checkpoint;
use marl_core::evalkit::{
    aggregate, all_scenarios, checkpoint_label, evaluate_population, read_result, result_file_name, write_result,
};
use marl_core::runners::{self, RunConfig};
use marl_core::scenarios::substrate_of;

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const CONFIG_FILE: &str = "config.txt";
const TABLE_FILE: &str = "table.csv";

#[derive(Parser)]
#[command(name = "marl", version, about = "Multi-agent actor-learner training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a population and write config.txt, metrics.csv and checkpoint.majx.
    Train(TrainArgs),
    /// Evaluate a checkpoint on scenarios; one result file per scenario and seed.
    Evaluate(EvaluateArgs),
    /// Average result files across seeds and print a table.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Base config file (key=value lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// single, sync, async or sebulba.
    #[arg(long)]
    arch: Option<String>,
    /// Substrate or scenario name.
    #[arg(long)]
    env: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    population: Option<String>,
    #[arg(long)]
    unroll: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rho_bar: Option<String>,
    #[arg(long)]
    c_bar: Option<String>,
    #[arg(long)]
    entropy_coef: Option<String>,
    #[arg(long)]
    value_coef: Option<String>,
    /// Actor steps between parameter fetches (0: every episode).
    #[arg(long)]
    sync_interval: Option<String>,
    #[arg(long)]
    infer_batch: Option<String>,
    #[arg(long)]
    infer_timeout_ms: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Scenario or substrate name.
    #[arg(long)]
    scenario: Option<String>,
    /// Evaluate the substrate and every registry scenario of it (taken from
    /// --scenario or --env).
    #[arg(long)]
    all_scenarios: bool,
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Column label; defaults to the run directory name.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Result files written by `evaluate`.
    files: Vec<PathBuf>,
    /// Column order, comma-separated.
    #[arg(long, value_delimiter = ',')]
    label: Vec<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn build_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        config::parse_config(&text, &mut cfg).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let flags = [
        ("arch", &args.arch),
        ("env", &args.env),
        ("steps", &args.steps),
        ("workers", &args.workers),
        ("population", &args.population),
        ("unroll", &args.unroll),
        ("seed", &args.seed),
        ("lr", &args.lr),
        ("gamma", &args.gamma),
        ("rho_bar", &args.rho_bar),
        ("c_bar", &args.c_bar),
        ("entropy_coef", &args.entropy_coef),
        ("value_coef", &args.value_coef),
        ("sync_interval", &args.sync_interval),
        ("infer_batch", &args.infer_batch),
        ("infer_timeout_ms", &args.infer_timeout_ms),
    ];
    for (key, value) in flags {
        if let Some(value) = value {
            config::apply(&mut cfg, key, value).map_err(|e| Failure::Usage(e.to_string()))?;
        }
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if cfg.out_dir.is_none() {
        return Err(Failure::Usage("--out is required".into()));
    }
    cfg.validate()
        .map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    marl_core::scenarios::make_env(&cfg.env, 0).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let out = cfg.out_dir.clone().expect("checked in build_config");
    fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    fs::write(out.join(CONFIG_FILE), config::format_config(&cfg)).map_err(runtime)?;
    let report = runners::run(&cfg).map_err(runtime)?;
    let recent = report
        .mean_recent_return(100)
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
    println!(
        "{} on {}: {} env steps, {} updates, {} episode returns, recent mean return {recent}, {:.1}s",
        cfg.architecture,
        cfg.env,
        report.env_steps,
        report.learner_steps,
        report.episodes.len(),
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), Failure> {
    if args.episodes == 0 {
        return Err(Failure::Usage("--episodes must be at least 1".into()));
    }
    let scenarios = if args.all_scenarios {
        let name =
            args.scenario.as_deref().or(args.env.as_deref()).ok_or_else(|| {
                Failure::Usage("--all-scenarios needs --scenario or --env to pick a substrate".into())
            })?;
        all_scenarios(substrate_of(name)).map_err(|e| Failure::Usage(e.to_string()))?
    } else {
        vec![args
            .scenario
            .clone()
            .ok_or_else(|| Failure::Usage("--scenario or --all-scenarios is required".into()))?]
    };
    let population = load_checkpoint(&args.ckpt).map_err(|e| runtime(format!("{}: {e}", args.ckpt.display())))?;
    let label = args.label.clone().unwrap_or_else(|| checkpoint_label(&args.ckpt));

    // Evaluate everything first so a failure leaves no partial output.
    let mut results = Vec::new();
    for scenario in &scenarios {
        for &seed in &args.seeds {
            results.push(evaluate_population(&population, scenario, args.episodes, seed, &label).map_err(runtime)?);
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    for result in &results {
        let path = args.out.join(result_file_name(&result.scenario, result.seed));
        write_result(result, &path).map_err(runtime)?;
        println!(
            "{} seed {}: mean focal return {:.4} over {} episodes -> {}",
            result.scenario,
            result.seed,
            result.mean_focal_return,
            result.episodes,
            path.display()
        );
    }
    Ok(())
}

fn aggregate_cmd(args: AggregateArgs) -> Result<(), Failure> {
    let results = args
        .files
        .iter()
        .map(|p| read_result(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let table = aggregate(&results, &args.label).map_err(runtime)?;
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    write_file(&args.out.join(TABLE_FILE), &table.to_csv())?;
    print!("{}", table.to_text());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Aggregate(args) => aggregate_cmd(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
