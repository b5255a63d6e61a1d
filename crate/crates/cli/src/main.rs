//! `evac`: runs evacuation experiments from presets or configuration files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evac_core::config::{load_config, load_strategy, ExperimentConfig, Mode, StrategySpec, PRESETS};
use evac_core::experiment::{execute, rerun, BatchSummary, Command, ExperimentReport};

#[derive(Parser)]
#[command(name = "evac", version, about = "Leader-driven crowd evacuation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment (optionally several replicates).
    Run(RunArgs),
    /// Run replicates for each leader count and tabulate failure rates.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Leader counts, as a list (`0,2,4`) or a range (`0-6`).
        #[arg(long, default_value = "0-6")]
        leaders: String,
    },
    /// Re-run an experiment from its manifest and compare every output.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List presets, or print one as a configuration file.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset used when no configuration file is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// go-to-target | compass | mpc | idle | smart-obstacle | <strategy file>
    #[arg(long)]
    strategy: Option<String>,
    /// Amplitude of the smart-obstacle strategy.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the number of leaders.
    #[arg(long = "leader-count")]
    leader_count: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run replicates sequentially so output is reproducible byte for byte.
    #[arg(long)]
    deterministic: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "micro" => Ok(Mode::Micro),
        "meso" => Ok(Mode::Meso),
        _ => Err(format!("unknown mode `{s}` (expected micro or meso)")),
    }
}

fn parse_strategy(s: &str, current: &StrategySpec, amplitude: Option<f64>) -> Result<StrategySpec> {
    Ok(match s {
        "go-to-target" => StrategySpec::GoToTarget,
        "compass" => StrategySpec::Compass,
        "mpc" => StrategySpec::Mpc,
        "idle" => StrategySpec::Idle,
        "smart-obstacle" => {
            let preset = match current {
                StrategySpec::SmartObstacle { amplitude } => *amplitude,
                _ => 1.3,
            };
            StrategySpec::SmartObstacle { amplitude: amplitude.unwrap_or(preset) }
        }
        path => {
            let path = Path::new(path);
            if !path.is_file() {
                bail!("`{s}` is neither a known strategy nor a strategy file");
            }
            StrategySpec::PiecewiseConstant(load_strategy(path)?)
        }
    })
}

fn parse_leaders(s: &str) -> Result<Vec<usize>> {
    let parse = |t: &str| t.trim().parse::<usize>().with_context(|| format!("invalid leader count `{t}`"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            bail!("empty leader range `{s}`");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(parse).collect()
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => load_config(path)?,
        (None, name) => {
            let name = name.as_deref().unwrap_or("setting1");
            ExperimentConfig::preset(name)
                .with_context(|| format!("unknown preset `{name}` (available: {})", PRESETS.join(", ")))?
        }
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = parse_strategy(s, &cfg.strategy, args.amplitude)?;
    } else if let (Some(a), StrategySpec::SmartObstacle { amplitude }) = (args.amplitude, &mut cfg.strategy) {
        *amplitude = a;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = args.leader_count {
        cfg.scenario.leaders = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(s: &BatchSummary, dt: f64) {
    let median = s.median_evacuation_step;
    println!(
        "leaders {}: {} replicates, {} failures (rate {:.3}, 95% CI [{:.3}, {:.3}]), median evacuation {} steps ({:.3} time units), mean evacuated fraction {:.3}{}",
        s.leaders,
        s.replicates,
        s.failures,
        s.failure_rate,
        s.failure_ci95.0,
        s.failure_ci95.1,
        median,
        median * dt,
        s.mean_evacuated_fraction,
        s.consensus_rate.map(|c| format!(", consensus rate {c:.3}")).unwrap_or_default()
    );
}

fn report(cfg: &ExperimentConfig, r: &ExperimentReport, out: &Path, deterministic: bool) {
    if let [runs] = r.results.as_slice() {
        if let [one] = runs.as_slice() {
            match one.evacuation_step() {
                Some(step) => println!("evacuated after {step} steps ({:.3} time units)", step as f64 * cfg.dt()),
                None => println!(
                    "not evacuated at horizon: {:.1} of {:.1} followers remain",
                    one.metrics.final_amount, one.metrics.initial_amount
                ),
            }
            if let Some(c) = one.metrics.consensus {
                println!("consensus: {}", if c { "reached" } else { "not reached" });
            }
        }
    }
    if r.results.len() > 1 || r.results.first().is_some_and(|v| v.len() > 1) {
        for s in &r.summaries {
            print_summary(s, cfg.dt());
        }
    }
    if !deterministic {
        println!("wall time {:.2} s", r.wall_seconds);
    }
    println!("outputs written to {}", out.display());
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Run(args) => {
            let cfg = build_config(&args)?;
            let r = execute(&cfg, &Command::Run, &args.out, args.deterministic)?;
            report(&cfg, &r, &args.out, args.deterministic);
        }
        Cmd::Sweep { run, leaders } => {
            let cfg = build_config(&run)?;
            let counts = parse_leaders(&leaders)?;
            let r = execute(&cfg, &Command::Sweep { leader_counts: counts }, &run.out, run.deterministic)?;
            report(&cfg, &r, &run.out, run.deterministic);
        }
        Cmd::Rerun { manifest, out } => {
            let check = rerun(&manifest, &out)?;
            if check.identical() {
                println!("all {} outputs identical", check.matched.len());
            } else {
                for f in &check.mismatched {
                    eprintln!("differs: {f}");
                }
                eprintln!("{} of {} outputs differ", check.mismatched.len(), check.matched.len() + check.mismatched.len());
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Cmd::Presets { name: Some(name) } => {
            let cfg = ExperimentConfig::preset(&name)
                .with_context(|| format!("unknown preset `{name}` (available: {})", PRESETS.join(", ")))?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
