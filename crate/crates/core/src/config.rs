//! Experiment configuration files.
//!
//! A file is a TOML document. An optional top-level `preset` names a
//! built-in configuration that the remaining keys override: tables merge
//! key by key, everything else (including arrays) is replaced, and a table
//! whose `kind` changes is replaced as a whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{CompassConfig, CostWeights, MpcConfig, PiecewiseConstant};
use crate::error::{Error, Result};
use crate::geometry::{Rect, Vector2};
use crate::meso::KineticConfig;
use crate::metrics::ConsensusCriteria;
use crate::params::ModelParams;
use crate::scenario::{LeaderLayout, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Micro,
    Meso,
}

/// Where leader controls come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    Idle,
    GoToTarget,
    /// Optimized per replicate by compass search (see `[compass]`).
    Compass,
    /// Receding-horizon control (see `[mpc]` and `[weights]`).
    Mpc,
    SmartObstacle { amplitude: f64 },
    /// Every leader moves with the same fixed velocity for the whole run.
    Constant { velocity: Vector2 },
    /// Piecewise-constant strategy stored in a separate file; replaced by
    /// the inline form when the configuration is loaded.
    File { path: PathBuf },
    PiecewiseConstant(PiecewiseConstant),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MesoSettings {
    pub horizon_steps: u64,
    pub kinetic: KineticConfig,
    /// Steps between density snapshots; 0 writes only the first and last.
    pub density_every: u64,
    pub density_resolution: [usize; 2],
    pub density_bounds: Rect,
}

impl Default for MesoSettings {
    fn default() -> Self {
        Self {
            horizon_steps: 4000,
            kinetic: KineticConfig::default(),
            density_every: 100,
            density_resolution: [60, 40],
            density_bounds: Rect::new(Vector2::new(0.0, 0.0), Vector2::new(40.0, 20.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassSettings {
    pub iterations: usize,
    pub max_variation: f64,
    pub stall_limit: usize,
    /// Slot length in steps of the model being optimized.
    pub switch_interval: usize,
    /// Speed of the initial constant-velocity guess.
    pub initial_speed: f64,
    pub u_bound: f64,
}

impl Default for CompassSettings {
    fn default() -> Self {
        let c = CompassConfig::default();
        Self {
            iterations: c.iterations,
            max_variation: c.max_variation,
            stall_limit: c.stall_limit,
            switch_interval: 20,
            initial_speed: 1.0,
            u_bound: 1.0,
        }
    }
}

impl CompassSettings {
    pub fn search(&self) -> CompassConfig {
        CompassConfig { iterations: self.iterations, max_variation: self.max_variation, stall_limit: self.stall_limit }
    }

    pub fn validate(&self) -> Result<()> {
        self.search().validate()?;
        if self.switch_interval == 0 {
            return Err(Error::invalid("compass.switch_interval", "must be positive"));
        }
        if !(self.u_bound > 0.0 && self.u_bound.is_finite()) {
            return Err(Error::invalid("compass.u_bound", "must be positive"));
        }
        if !(self.initial_speed >= 0.0 && self.initial_speed.is_finite()) {
            return Err(Error::invalid("compass.initial_speed", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSettings {
    pub direction: Vector2,
    pub window: usize,
    pub min_polarization: f64,
    pub min_agreement: f64,
}

impl ConsensusSettings {
    pub fn along(direction: Vector2) -> Self {
        let c = ConsensusCriteria::default();
        Self { direction, window: c.window, min_polarization: c.min_polarization, min_agreement: c.min_agreement }
    }

    pub fn criteria(&self) -> ConsensusCriteria {
        ConsensusCriteria { window: self.window, min_polarization: self.min_polarization, min_agreement: self.min_agreement }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Write the trajectory CSV (microscopic runs).
    pub trajectory: bool,
    /// Steps between recorded trajectory frames.
    pub trajectory_every: u64,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { trajectory: true, trajectory_every: 1 }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Replicate `i` runs with seed `seed + i`.
    pub replicates: usize,
    pub model: ModelParams,
    pub scenario: Scenario,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub meso: MesoSettings,
    #[serde(default)]
    pub compass: CompassSettings,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub consensus: Option<ConsensusSettings>,
    /// A replicate succeeds when at most this many followers remain at the
    /// horizon.
    #[serde(default = "default_allowance")]
    pub success_allowance: usize,
    #[serde(default)]
    pub output: OutputSettings,
}

fn default_allowance() -> usize {
    10
}

pub const PRESETS: [&str; 4] = ["setting0", "setting1", "setting2", "setting3"];

impl ExperimentConfig {
    fn base(model: ModelParams, scenario: Scenario, strategy: StrategySpec) -> Self {
        Self {
            seed: 1,
            mode: Mode::Micro,
            replicates: 1,
            model,
            scenario,
            strategy,
            meso: MesoSettings::default(),
            compass: CompassSettings::default(),
            mpc: MpcConfig::default(),
            weights: CostWeights::default(),
            consensus: None,
            success_allowance: default_allowance(),
            output: OutputSettings::default(),
        }
    }

    /// Built-in configurations for the four reference settings.
    pub fn preset(name: &str) -> Option<Self> {
        let cfg = match name {
            "setting0" => {
                let strategy = StrategySpec::Constant { velocity: Vector2::new(1.0, 0.0) };
                let mut c = Self::base(ModelParams::setting0(), Scenario::setting0(), strategy);
                c.consensus = Some(ConsensusSettings::along(Vector2::new(1.0, 0.0)));
                c.meso.density_bounds = Rect::new(Vector2::new(-10.0, -10.0), Vector2::new(50.0, 20.0));
                c
            }
            "setting1" => {
                let mut c = Self::base(ModelParams::setting1(), Scenario::setting1(), StrategySpec::GoToTarget);
                c.meso.density_bounds = Rect::new(Vector2::new(10.0, 0.0), Vector2::new(40.0, 20.0));
                c
            }
            "setting2" => {
                let mut c = Self::base(ModelParams::setting2(), Scenario::setting2(), StrategySpec::GoToTarget);
                c.compass.switch_interval = 50;
                c.compass.iterations = 30;
                c.meso.density_bounds = Rect::new(Vector2::new(0.0, 0.0), Vector2::new(30.0, 20.0));
                c
            }
            "setting3" => {
                let mut c = Self::base(
                    ModelParams::setting3(),
                    Scenario::setting3(),
                    StrategySpec::SmartObstacle { amplitude: 1.3 },
                );
                c.meso.density_bounds = Rect::new(Vector2::new(0.0, 0.0), Vector2::new(11.0, 10.0));
                c
            }
            _ => return None,
        };
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scenario.validate()?;
        if let LeaderLayout::Points { positions } = &self.scenario.leader_layout {
            if positions.len() < self.scenario.leaders {
                return Err(Error::invalid(
                    "scenario.leader_layout.positions",
                    format!("{} leaders but {} positions", self.scenario.leaders, positions.len()),
                ));
            }
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", "must be positive"));
        }
        self.meso.kinetic.validate()?;
        if self.meso.horizon_steps == 0 {
            return Err(Error::invalid("meso.horizon_steps", "must be positive"));
        }
        if self.meso.density_resolution.contains(&0) {
            return Err(Error::invalid("meso.density_resolution", "must be positive"));
        }
        if !self.meso.density_bounds.is_valid() || self.meso.density_bounds.width() <= 0.0 || self.meso.density_bounds.height() <= 0.0 {
            return Err(Error::invalid("meso.density_bounds", "must be a non-degenerate box"));
        }
        self.compass.validate()?;
        self.mpc.validate()?;
        self.weights.validate()?;
        if self.output.trajectory_every == 0 {
            return Err(Error::invalid("output.trajectory_every", "must be positive"));
        }
        if let Some(c) = &self.consensus {
            if c.window == 0 || c.direction.norm() == 0.0 || !c.direction.is_finite() {
                return Err(Error::invalid("consensus", "needs a positive window and a nonzero direction"));
            }
        }
        match &self.strategy {
            StrategySpec::SmartObstacle { amplitude } if !(*amplitude >= 0.0 && amplitude.is_finite()) => {
                return Err(Error::invalid("strategy.amplitude", "must be finite and non-negative"));
            }
            StrategySpec::Constant { velocity } if !velocity.is_finite() => {
                return Err(Error::invalid("strategy.velocity", "must be finite"));
            }
            StrategySpec::PiecewiseConstant(pc) => pc.validate(self.scenario.leaders, self.horizon_steps() as usize)?,
            StrategySpec::Mpc if self.mode == Mode::Meso => {
                return Err(Error::Unsupported("MPC is only available for the microscopic model".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Horizon of the selected model, in its own steps.
    pub fn horizon_steps(&self) -> u64 {
        match self.mode {
            Mode::Micro => self.scenario.horizon_steps as u64,
            Mode::Meso => self.meso.horizon_steps,
        }
    }

    /// Time step of the selected model.
    pub fn dt(&self) -> f64 {
        match self.mode {
            Mode::Micro => self.model.dt,
            Mode::Meso => self.meso.kinetic.dt,
        }
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a configuration document; relative strategy paths resolve
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if table.is_empty() {
            return Err(Error::Config("configuration is empty".into()));
        }
        let merged = match table.remove("preset") {
            Some(toml::Value::String(name)) => {
                let base = Self::preset(&name).ok_or_else(|| {
                    Error::invalid("preset", format!("unknown preset `{name}`; expected one of {}", PRESETS.join(", ")))
                })?;
                let mut base = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut base, table);
                base
            }
            Some(_) => return Err(Error::invalid("preset", "must be a string")),
            None => table,
        };
        let mut cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let StrategySpec::File { path } = &cfg.strategy {
            let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
            cfg.strategy = StrategySpec::PiecewiseConstant(load_strategy(&path)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deep merge of `over` into `base`.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => {
                merge(b, o);
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Loads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::from_toml_str(&text, dir)
}

/// Reads a piecewise-constant strategy file (`switch_interval`, `u_bound`,
/// `velocities` as `[[ {x, y}, ... ], ...]` per slot).
pub fn load_strategy(path: &Path) -> Result<PiecewiseConstant> {
    let text = std::fs::read_to_string(path)?;
    let s: PiecewiseConstant = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    PiecewiseConstant::new(s.switch_interval, s.velocities, s.u_bound)
}

pub fn save_strategy(path: &Path, strategy: &PiecewiseConstant) -> Result<()> {
    let text = toml::to_string(strategy).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
