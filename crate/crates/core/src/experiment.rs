//! Experiment orchestration: single runs, replicate batches, leader-count
//! sweeps, and manifests that allow byte-identical re-runs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, StrategySpec};
use crate::control::{evac_time_cost, CompassResult, Controller, LeaderStrategy, PiecewiseConstant};
use crate::error::{Error, Result};
use crate::meso::{density_histogram, write_density_grid, write_ensemble_csv, LeaderSwarm, ParticleEnsemble};
use crate::metrics::{evacuation_succeeded, mean, mean_ci95, median, wilson_ci95, RunMetrics};
use crate::micro::CrowdState;
use crate::output::{fmt9, TrajectoryWriter};
use crate::rng::RandomSource;
use crate::runner::{
    initial_guess, optimize, outcome_of, run_meso, run_micro, ConsensusTarget, MesoRemainingMass, MicroEvacTime,
    RunOptions,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Result of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub seed: u64,
    pub metrics: RunMetrics,
    /// All but the allowed number of followers left before the horizon.
    pub success: bool,
    /// Evacuation-time cost (micro) or remaining mass (meso).
    pub cost: f64,
    pub compass: Option<CompassResult>,
}

impl ReplicateResult {
    pub fn evacuation_step(&self) -> Option<u64> {
        self.metrics.evacuation_step
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

/// Rounds to nine significant digits, matching every other numeric output.
fn r9(x: f64) -> f64 {
    fmt9(x).parse().unwrap_or(x)
}

fn strategy_name(spec: &StrategySpec) -> &'static str {
    match spec {
        StrategySpec::Idle => "idle",
        StrategySpec::GoToTarget => "go-to-target",
        StrategySpec::Compass => "compass",
        StrategySpec::Mpc => "mpc",
        StrategySpec::SmartObstacle { .. } => "smart-obstacle",
        StrategySpec::Constant { .. } => "constant",
        StrategySpec::File { .. } | StrategySpec::PiecewiseConstant(_) => "piecewise-constant",
    }
}

fn consensus_target(cfg: &ExperimentConfig) -> Option<ConsensusTarget> {
    cfg.consensus.map(|c| ConsensusTarget { direction: c.direction, criteria: c.criteria() })
}

fn fixed_strategy(cfg: &ExperimentConfig) -> Result<LeaderStrategy> {
    Ok(match &cfg.strategy {
        StrategySpec::Idle => LeaderStrategy::Idle,
        StrategySpec::GoToTarget => LeaderStrategy::GoToTarget,
        StrategySpec::Mpc => LeaderStrategy::Mpc { config: cfg.mpc, weights: cfg.weights },
        StrategySpec::SmartObstacle { amplitude } => LeaderStrategy::SmartObstacle { amplitude: *amplitude },
        StrategySpec::Constant { velocity } => {
            let n = cfg.scenario.leaders;
            let horizon = cfg.horizon_steps() as usize;
            let bound = velocity.x.abs().max(velocity.y.abs());
            LeaderStrategy::PiecewiseConstant(PiecewiseConstant::new(horizon, vec![vec![*velocity; n]], bound)?)
        }
        StrategySpec::PiecewiseConstant(pc) => LeaderStrategy::PiecewiseConstant(pc.clone()),
        StrategySpec::File { path } => {
            LeaderStrategy::PiecewiseConstant(crate::config::load_strategy(path)?)
        }
        StrategySpec::Compass => unreachable!("compass strategies are produced by optimization"),
    })
}

/// Runs one replicate with `seed`; writes its artifacts to `out` if given.
pub fn run_replicate(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<ReplicateResult> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    match cfg.mode {
        Mode::Micro => run_micro_replicate(cfg, seed, out),
        Mode::Meso => run_meso_replicate(cfg, seed, out),
    }
}

fn write_compass(dir: &Path, result: &CompassResult) -> Result<()> {
    let mut w = create(&dir.join("cost_history.csv"))?;
    writeln!(w, "iteration,cost,accepted")?;
    for rec in &result.history {
        writeln!(w, "{},{},{}", rec.iteration, fmt9(rec.cost), u8::from(rec.accepted))?;
    }
    w.flush()?;
    crate::config::save_strategy(&dir.join("strategy.toml"), &result.strategy)
}

fn run_micro_replicate(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<ReplicateResult> {
    let source = RandomSource::new(seed);
    let scenario = &cfg.scenario;
    let params = &cfg.model;
    let horizon = scenario.horizon_steps as u64;
    let initial = CrowdState::spawn(scenario, &source)?;
    let mut compass = None;
    let strategy = if cfg.strategy == StrategySpec::Compass {
        let positions: Vec<_> = initial.leaders.iter().map(|l| l.position).collect();
        let init = initial_guess(
            &positions,
            scenario,
            cfg.compass.switch_interval,
            horizon,
            cfg.compass.initial_speed,
            cfg.compass.u_bound,
        )?;
        let mut objective = MicroEvacTime { scenario, params, initial: &initial, source, horizon_steps: horizon };
        let result = optimize(&mut objective, &init, &cfg.compass.search(), &source)?;
        let s = LeaderStrategy::PiecewiseConstant(result.strategy.clone());
        compass = Some(result);
        s
    } else {
        fixed_strategy(cfg)?
    };
    let mut controller = Controller::new(strategy, source);
    let opts = RunOptions { consensus: consensus_target(cfg), ..RunOptions::new(horizon) };
    let mut writer = match out {
        Some(dir) if cfg.output.trajectory => Some(TrajectoryWriter::new(create(&dir.join("trajectory.csv"))?)?),
        _ => None,
    };
    let every = cfg.output.trajectory_every;
    let outcome = run_micro(initial, scenario, params, &mut controller, &source, &opts, |st| {
        if let Some(w) = writer.as_mut() {
            if st.step % every == 0 || st.all_evacuated() {
                w.record(st)?;
            }
        }
        Ok(())
    })?;
    if let Some(w) = writer {
        w.into_inner().flush()?;
    }
    let m = outcome.metrics;
    let cost = evac_time_cost(&outcome_of(&m, horizon));
    let evacuated = (m.initial_amount - m.final_amount).round() as usize;
    let success = evacuation_succeeded(m.initial_amount as usize, evacuated, cfg.success_allowance);
    let result = ReplicateResult { seed, metrics: m, success, cost, compass };
    if let Some(dir) = out {
        if let Some(c) = &result.compass {
            write_compass(dir, c)?;
        }
        write_report(dir, cfg, &result)?;
    }
    Ok(result)
}

fn write_leaders<W: Write>(w: &mut W, step: u64, swarm: &LeaderSwarm) -> Result<()> {
    for (k, l) in swarm.leaders.iter().enumerate() {
        writeln!(
            w,
            "{step},{k},{},{},{},{},{}",
            fmt9(l.position.x),
            fmt9(l.position.y),
            fmt9(l.velocity.x),
            fmt9(l.velocity.y),
            u8::from(l.evacuated)
        )?;
    }
    Ok(())
}

fn run_meso_replicate(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<ReplicateResult> {
    let source = RandomSource::new(seed);
    let scenario = &cfg.scenario;
    let params = &cfg.model;
    let kinetic = &cfg.meso.kinetic;
    let horizon = cfg.meso.horizon_steps;
    let initial = ParticleEnsemble::spawn(scenario, kinetic.samples, &source)?;
    let mut compass = None;
    let strategy = if cfg.strategy == StrategySpec::Compass {
        let positions: Vec<_> = initial.1.leaders.iter().map(|l| l.position).collect();
        let init = initial_guess(
            &positions,
            scenario,
            cfg.compass.switch_interval,
            horizon,
            cfg.compass.initial_speed,
            cfg.compass.u_bound,
        )?;
        let mut objective =
            MesoRemainingMass { scenario, params, kinetic, initial: &initial, source, horizon_steps: horizon };
        let result = optimize(&mut objective, &init, &cfg.compass.search(), &source)?;
        let s = LeaderStrategy::PiecewiseConstant(result.strategy.clone());
        compass = Some(result);
        s
    } else {
        fixed_strategy(cfg)?
    };
    let mut controller = Controller::new(strategy, source);
    let opts = RunOptions { consensus: consensus_target(cfg), ..RunOptions::new(horizon) };
    let density_dir = out.map(|d| d.join("density"));
    if let Some(d) = &density_dir {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let mut leaders_out = match out {
        Some(dir) => {
            let mut w = create(&dir.join("leaders.csv"))?;
            writeln!(w, "step,id,x,y,vx,vy,evacuated")?;
            Some(w)
        }
        None => None,
    };
    let every = cfg.meso.density_every;
    let [nx, ny] = cfg.meso.density_resolution;
    let bounds = cfg.meso.density_bounds;
    let mut snapshot = |ens: &ParticleEnsemble, swarm: &LeaderSwarm, force: bool| -> Result<()> {
        if let Some(w) = leaders_out.as_mut() {
            write_leaders(w, ens.step, swarm)?;
        }
        if let Some(d) = &density_dir {
            let due = if every == 0 { ens.step == 0 } else { ens.step % every == 0 };
            if due || force {
                let grid = density_histogram(ens, bounds, nx, ny)?;
                let mut w = create(&d.join(format!("density_{:06}.txt", ens.step)))?;
                write_density_grid(&mut w, &grid)?;
                w.flush()?;
            }
        }
        Ok(())
    };
    let outcome = run_meso(
        initial.0,
        initial.1,
        scenario,
        params,
        kinetic,
        &mut controller,
        &source,
        &opts,
        |e, s| snapshot(e, s, false),
    )?;
    snapshot(&outcome.final_ensemble, &outcome.final_swarm, true)?;
    drop(snapshot);
    if let Some(mut w) = leaders_out {
        w.flush()?;
    }
    let m = outcome.metrics;
    let cost = m.final_amount;
    let success = m.final_amount <= cfg.success_allowance as f64;
    let result = ReplicateResult { seed, metrics: m, success, cost, compass };
    if let Some(dir) = out {
        let mut w = create(&dir.join("ensemble_final.csv"))?;
        write_ensemble_csv(&mut w, &outcome.final_ensemble)?;
        w.flush()?;
        if let Some(c) = &result.compass {
            write_compass(dir, c)?;
        }
        write_report(dir, cfg, &result)?;
    }
    Ok(result)
}

#[derive(Serialize)]
struct CompassSummary {
    initial_cost: f64,
    final_cost: f64,
    iterations: usize,
    accepted: usize,
}

#[derive(Serialize)]
struct Series {
    occupancy: Vec<f64>,
    evacuated_fraction: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    polarization: Vec<f64>,
}

#[derive(Serialize)]
struct RunReport {
    mode: Mode,
    strategy: &'static str,
    seed: u64,
    dt: f64,
    initial_amount: f64,
    steps_run: u64,
    evacuation_step: Option<u64>,
    evacuation_time: Option<f64>,
    final_amount: f64,
    evacuated_fraction: f64,
    success: bool,
    consensus: Option<bool>,
    cost: f64,
    compass: Option<CompassSummary>,
    series: Series,
}

fn write_report(dir: &Path, cfg: &ExperimentConfig, r: &ReplicateResult) -> Result<()> {
    let m = &r.metrics;
    let report = RunReport {
        mode: cfg.mode,
        strategy: strategy_name(&cfg.strategy),
        seed: r.seed,
        dt: r9(m.dt),
        initial_amount: r9(m.initial_amount),
        steps_run: m.steps_run,
        evacuation_step: m.evacuation_step,
        evacuation_time: m.evacuation_step.map(|s| r9(s as f64 * m.dt)),
        final_amount: r9(m.final_amount),
        evacuated_fraction: r9(m.evacuated_fraction),
        success: r.success,
        consensus: m.consensus,
        cost: r9(r.cost),
        compass: r.compass.as_ref().map(|c| CompassSummary {
            initial_cost: r9(c.history[0].cost),
            final_cost: r9(c.cost),
            iterations: c.history.len() - 1,
            accepted: c.history.iter().skip(1).filter(|h| h.accepted).count(),
        }),
        series: Series {
            occupancy: m.occupancy.iter().map(|&x| r9(x)).collect(),
            evacuated_fraction: m.evacuated_series.iter().map(|&x| r9(x)).collect(),
            polarization: m.polarization.iter().map(|p| r9(p.phi)).collect(),
        },
    };
    let text = toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("metrics.toml");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Aggregate over a batch of replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub leaders: usize,
    pub replicates: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub failure_ci95: (f64, f64),
    /// Median over replicates; non-evacuated runs count as the horizon.
    pub median_evacuation_step: f64,
    pub evacuated_runs: usize,
    pub mean_evacuated_fraction: f64,
    pub evacuated_fraction_ci95: (f64, f64),
    pub consensus_rate: Option<f64>,
}

pub fn summarize(leaders: usize, horizon: u64, results: &[ReplicateResult]) -> Result<BatchSummary> {
    if results.is_empty() {
        return Err(Error::NoReplicates);
    }
    let n = results.len();
    let failures = results.iter().filter(|r| !r.success).count();
    let steps: Vec<f64> = results.iter().map(|r| r.evacuation_step().unwrap_or(horizon) as f64).collect();
    let fractions: Vec<f64> = results.iter().map(|r| r.metrics.evacuated_fraction).collect();
    let consensus: Vec<bool> = results.iter().filter_map(|r| r.metrics.consensus).collect();
    Ok(BatchSummary {
        leaders,
        replicates: n,
        failures,
        failure_rate: failures as f64 / n as f64,
        failure_ci95: wilson_ci95(failures, n),
        median_evacuation_step: median(&steps),
        evacuated_runs: results.iter().filter(|r| r.evacuation_step().is_some()).count(),
        mean_evacuated_fraction: mean(&fractions),
        evacuated_fraction_ci95: mean_ci95(&fractions),
        consensus_rate: (!consensus.is_empty())
            .then(|| consensus.iter().filter(|c| **c).count() as f64 / consensus.len() as f64),
    })
}

/// Runs `cfg.replicates` replicates (seeds `cfg.seed + i`), in parallel
/// unless `deterministic`. Results come back in seed order.
pub fn run_batch(cfg: &ExperimentConfig, out: Option<&Path>, deterministic: bool) -> Result<Vec<ReplicateResult>> {
    let one = |i: usize| -> Result<ReplicateResult> {
        let seed = cfg.seed + i as u64;
        let dir = out.map(|d| if cfg.replicates == 1 { d.to_path_buf() } else { d.join(format!("replicate_{i:04}")) });
        run_replicate(cfg, seed, dir.as_deref())
    };
    if deterministic || cfg.replicates == 1 {
        (0..cfg.replicates).map(one).collect()
    } else {
        (0..cfg.replicates).into_par_iter().map(one).collect()
    }
}

fn write_replicate_table(path: &Path, results: &[ReplicateResult]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "seed,evacuation_step,steps_run,final_amount,evacuated_fraction,success,consensus,cost")?;
    for r in results {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.seed,
            m.evacuation_step.map(|s| s.to_string()).unwrap_or_default(),
            m.steps_run,
            fmt9(m.final_amount),
            fmt9(m.evacuated_fraction),
            u8::from(r.success),
            m.consensus.map(|c| u8::from(c).to_string()).unwrap_or_default(),
            fmt9(r.cost)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary_table(path: &Path, rows: &[BatchSummary]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "leaders,replicates,failures,failure_rate,failure_ci_low,failure_ci_high,median_evacuation_step,evacuated_runs,mean_evacuated_fraction,fraction_ci_low,fraction_ci_high,consensus_rate"
    )?;
    for s in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.leaders,
            s.replicates,
            s.failures,
            fmt9(s.failure_rate),
            fmt9(s.failure_ci95.0),
            fmt9(s.failure_ci95.1),
            fmt9(s.median_evacuation_step),
            s.evacuated_runs,
            fmt9(s.mean_evacuated_fraction),
            fmt9(s.evacuated_fraction_ci95.0),
            fmt9(s.evacuated_fraction_ci95.1),
            s.consensus_rate.map(fmt9).unwrap_or_default()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// What a manifest re-executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    Run,
    Sweep { leader_counts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifact_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub deterministic: bool,
    pub command: Command,
    /// Output file (relative path) to SHA-256 digest.
    pub outputs: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| io_err(dir, e))?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

/// Digests of every file under `dir` except the manifest.
pub fn digest_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    collect_files(dir, dir, &mut out)?;
    Ok(out)
}

/// Summary of an executed command.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<BatchSummary>,
    pub results: Vec<Vec<ReplicateResult>>,
    pub manifest: Manifest,
    pub wall_seconds: f64,
}

/// Executes `command` into `out` (created if needed) and writes the
/// manifest last.
pub fn execute(cfg: &ExperimentConfig, command: &Command, out: &Path, deterministic: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let config_text = cfg.to_toml()?;
    fs::write(out.join("config.toml"), &config_text).map_err(|e| io_err(out, e))?;
    let mut summaries = Vec::new();
    let mut all = Vec::new();
    match command {
        Command::Run => {
            let results = run_batch(cfg, Some(out), deterministic)?;
            let summary = summarize(cfg.scenario.leaders, cfg.horizon_steps(), &results)?;
            if cfg.replicates > 1 {
                write_replicate_table(&out.join("replicates.csv"), &results)?;
                write_summary_table(&out.join("summary.csv"), std::slice::from_ref(&summary))?;
            }
            summaries.push(summary);
            all.push(results);
        }
        Command::Sweep { leader_counts } => {
            if leader_counts.is_empty() {
                return Err(Error::invalid("sweep.leader_counts", "needs at least one leader count"));
            }
            for &n in leader_counts {
                let mut c = cfg.clone();
                c.scenario.leaders = n;
                if let StrategySpec::PiecewiseConstant(_) = c.strategy {
                    return Err(Error::Unsupported("leader-count sweeps need a strategy that adapts to the count".into()));
                }
                c.validate()?;
                let dir = out.join(format!("leaders_{n}"));
                let results = run_batch(&c, Some(&dir), deterministic)?;
                write_replicate_table(&dir.join("replicates.csv"), &results)?;
                summaries.push(summarize(n, c.horizon_steps(), &results)?);
                all.push(results);
            }
            write_summary_table(&out.join("sweep.csv"), &summaries)?;
        }
    }
    let outputs = digest_outputs(out)?;
    let manifest = Manifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: cfg.seed,
        deterministic,
        command: command.clone(),
        outputs,
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join(MANIFEST_FILE), text).map_err(|e| io_err(out, e))?;
    Ok(ExperimentReport { summaries, results: all, manifest, wall_seconds: started.elapsed().as_secs_f64() })
}

/// Single-run entry point (`Command::Run`).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, deterministic: bool) -> Result<ExperimentReport> {
    execute(cfg, &Command::Run, out, deterministic)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let digest = sha256_hex(m.config.to_toml()?.as_bytes());
    if digest != m.config_sha256 {
        return Err(Error::Config(format!(
            "{}: configuration digest {digest} does not match recorded {}",
            path.display(),
            m.config_sha256
        )));
    }
    Ok(m)
}

/// Outcome of re-running a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct RerunCheck {
    pub matched: Vec<String>,
    /// Files whose digest differs, or that appear on one side only.
    pub mismatched: Vec<String>,
}

impl RerunCheck {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-executes a manifest into `out` and compares every output digest.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<RerunCheck> {
    let m = read_manifest(manifest_path)?;
    if m.artifact_version != ARTIFACT_VERSION {
        log::warn!("manifest written by version {}, running {}", m.artifact_version, ARTIFACT_VERSION);
    }
    let report = execute(&m.config, &m.command, out, m.deterministic)?;
    let fresh = &report.manifest.outputs;
    let mut matched = Vec::new();
    let mut mismatched = Vec::new();
    for (file, digest) in &m.outputs {
        match fresh.get(file) {
            Some(d) if d == digest => matched.push(file.clone()),
            _ => mismatched.push(file.clone()),
        }
    }
    mismatched.extend(fresh.keys().filter(|f| !m.outputs.contains_key(*f)).cloned());
    Ok(RerunCheck { matched, mismatched })
}

/// Strategy to hand to a fixed-strategy run of a compass result.
pub fn as_spec(strategy: &PiecewiseConstant) -> StrategySpec {
    StrategySpec::PiecewiseConstant(strategy.clone())
}
