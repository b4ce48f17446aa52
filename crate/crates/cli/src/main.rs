use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use duomix::config::{annotated_defaults, RunConfig};
use duomix::envs::{EnvConfig, EnvName};
use duomix::replay::{read_slot_csv, VisitSummary};
use duomix::runtime::bench_grid;
use duomix::tensor::Checkpoint;
use duomix::trainer::{evaluate_checkpoint, train_run, RunArtifacts, TrainOptions};
use duomix::Error;
use serde_json::json;

/// Environment variable naming the root directory for run outputs.
const OUT_ROOT_VAR: &str = "DUOMIX_OUT";

#[derive(Parser)]
#[command(name = "duomix", version, about = "Cooperative multi-agent Q-learning with a double monotonic mixer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed listed in the configuration.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint; prints one JSON report.
    Eval(EvalArgs),
    /// Rollout throughput for a grid of worker × actor layouts.
    Bench(BenchArgs),
    /// Visit-count statistics of a run's replay dump.
    ReplayInspect(InspectArgs),
    /// Print the default configuration with comments.
    PrintDefaults,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set runtime.workers=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Hold β at 0.
    #[arg(long)]
    no_intrinsic: bool,
    /// Uniform sampling without importance weights.
    #[arg(long)]
    uniform_replay: bool,
    /// Single-threaded 1 × 1 driver.
    #[arg(long)]
    no_distributed: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Evaluate on this environment instead of the one trained on.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Layouts as `WORKERSxACTORS`, comma separated; the first is the baseline.
    #[arg(long, default_value = "1x1,3x4", value_delimiter = ',', value_parser = parse_grid)]
    grid: Vec<(usize, usize)>,
    /// Seconds per measurement window.
    #[arg(long, default_value_t = 5.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    run_dir: PathBuf,
    /// Print the per-slot table instead of the summary.
    #[arg(long)]
    csv: bool,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, a) = s
        .split_once('x')
        .ok_or_else(|| format!("`{s}` is not of the form WORKERSxACTORS"))?;
    let num = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (num(w), num(a)) {
        (Some(w), Some(a)) => Ok((w, a)),
        _ => Err(format!("`{s}` needs two positive counts")),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, &args.overrides)?;
    cfg.apply_flags(args.no_intrinsic, args.uniform_replay, args.no_distributed);
    cfg.validate()?;
    Ok(cfg)
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Release)) {
        log::warn!("interrupt handler not installed: {e}");
    }
    let opts = TrainOptions { interrupt };
    let base = out_root().join(&cfg.output.dir);
    for &seed in &cfg.seeds {
        let dir = base.join(format!("seed-{seed}"));
        let s = train_run(&cfg, seed, &dir, &opts)?;
        let last = s.reports.last();
        let line = json!({
            "seed": seed,
            "dir": dir,
            "train_steps": s.train_steps,
            "env_steps": s.env_steps,
            "episodes": s.episodes,
            "evaluations": s.reports.len(),
            "final_win_rate": last.map(|r| r.win_rate),
            "first_win_episode": s.first_win_episode,
            "interrupted": s.interrupted,
        });
        println!("{line}");
        if s.interrupted {
            break;
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let env = match &args.env {
        Some(name) => {
            let name: EnvName = serde_json::from_value(json!(name))
                .map_err(|_| Failure::Config(format!("unknown environment `{name}`")))?;
            Some(EnvConfig::named(name))
        }
        None => None,
    };
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let report = evaluate_checkpoint(&ckpt, env.as_ref(), args.episodes, args.seed)?;
    println!("{}", serde_json::to_string(&report).expect("report serialises"));
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    if !(args.seconds > 0.0 && args.seconds.is_finite()) {
        return Err(Failure::Config("--seconds must be positive".into()));
    }
    let rows = bench_grid(&cfg, &args.grid, Duration::from_secs_f64(args.seconds), args.seed)?;
    println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialise"));
    Ok(())
}

fn cmd_replay_inspect(args: &InspectArgs) -> CmdResult {
    let path = RunArtifacts::in_dir(&args.run_dir).replay_csv;
    let text = read_dump(&path)?;
    if args.csv {
        print!("{text}");
        return Ok(());
    }
    let slots = read_slot_csv(&text)?;
    let summary = VisitSummary::from_slots(&slots);
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
    Ok(())
}

fn read_dump(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("no replay dump at {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ReplayInspect(a) => cmd_replay_inspect(a),
        Command::PrintDefaults => {
            print!("{}", annotated_defaults());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
