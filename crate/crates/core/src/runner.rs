//! Time loops for both scales and the compass objectives built on them.

use crate::control::{
    compass_search, evac_time_cost, CompassConfig, CompassObjective, CompassResult, Controller, EvacuationOutcome,
    Evaluation, LeaderStrategy, PiecewiseConstant,
};
use crate::error::Result;
use crate::geometry::Vector2;
use crate::meso::{kinetic_step, KineticConfig, LeaderSwarm, ParticleEnsemble};
use crate::metrics::{
    consensus_detector, evacuated_fraction, occupancy_of_sigma, polarization, ConsensusCriteria,
    FollowerPopulation, RunMetrics,
};
use crate::micro::{micro_step, CrowdState};
use crate::params::ModelParams;
use crate::rng::{tag, RandomSource};
use crate::scenario::Scenario;

/// Consensus evaluation target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusTarget {
    pub direction: Vector2,
    pub criteria: ConsensusCriteria,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub horizon_steps: u64,
    /// Stop as soon as every follower has left.
    pub stop_when_evacuated: bool,
    /// Stop (flagged as aborted) once `step * dt` reaches this time without
    /// full evacuation.
    pub abort_at_time: Option<f64>,
    pub consensus: Option<ConsensusTarget>,
}

impl RunOptions {
    pub fn new(horizon_steps: u64) -> Self {
        Self { horizon_steps, stop_when_evacuated: true, abort_at_time: None, consensus: None }
    }
}

#[derive(Debug, Clone)]
pub struct MicroOutcome {
    pub metrics: RunMetrics,
    pub final_state: CrowdState,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct MesoOutcome {
    pub metrics: RunMetrics,
    pub final_ensemble: ParticleEnsemble,
    pub final_swarm: LeaderSwarm,
    pub aborted: bool,
}

struct Recorder {
    metrics: RunMetrics,
    track_polarization: bool,
}

impl Recorder {
    fn new(dt: f64, initial: f64, track_polarization: bool) -> Self {
        Self { metrics: RunMetrics { dt, initial_amount: initial, ..Default::default() }, track_polarization }
    }

    fn push<P: FollowerPopulation>(&mut self, pop: &P, scenario: &Scenario, velocities: impl FnOnce() -> Vec<Vector2>) {
        self.metrics.occupancy.push(occupancy_of_sigma(pop, scenario));
        self.metrics.evacuated_series.push(evacuated_fraction(pop, self.metrics.initial_amount));
        if self.track_polarization {
            self.metrics.polarization.push(polarization(velocities()));
        }
    }

    fn finish<P: FollowerPopulation>(mut self, pop: &P, steps: u64, evac: Option<u64>, consensus: Option<ConsensusTarget>) -> RunMetrics {
        self.metrics.steps_run = steps;
        self.metrics.evacuation_step = evac;
        self.metrics.final_amount = pop.active_amount();
        self.metrics.evacuated_fraction = evacuated_fraction(pop, self.metrics.initial_amount);
        if let Some(c) = consensus {
            self.metrics.consensus = Some(consensus_detector(&self.metrics.polarization, c.direction, &c.criteria));
        }
        self.metrics
    }
}

/// Runs the microscopic model from `state`. `observe` sees the initial
/// state and every state after a step.
pub fn run_micro(
    mut state: CrowdState,
    scenario: &Scenario,
    params: &ModelParams,
    controller: &mut Controller,
    source: &RandomSource,
    opts: &RunOptions,
    mut observe: impl FnMut(&CrowdState) -> Result<()>,
) -> Result<MicroOutcome> {
    let initial = state.followers.len() as f64;
    let mut rec = Recorder::new(params.dt, initial, opts.consensus.is_some());
    rec.push(&state, scenario, || crowd_velocities(&state));
    observe(&state)?;
    let mut evac = None;
    let mut aborted = false;
    loop {
        if state.all_evacuated() {
            evac.get_or_insert(state.step);
            if opts.stop_when_evacuated {
                break;
            }
        }
        if state.step >= opts.horizon_steps {
            break;
        }
        if evac.is_none() && opts.abort_at_time.is_some_and(|t| state.step as f64 * params.dt >= t) {
            aborted = true;
            break;
        }
        let controls = controller.micro_controls(&state, params, scenario)?;
        let mut rng = source.stream(&[tag::MICRO_NOISE, state.step]);
        state = micro_step(&state, &controls, params, scenario, &mut rng)?;
        rec.push(&state, scenario, || crowd_velocities(&state));
        observe(&state)?;
    }
    let metrics = rec.finish(&state, state.step, evac, opts.consensus);
    Ok(MicroOutcome { metrics, final_state: state, aborted })
}

fn crowd_velocities(state: &CrowdState) -> Vec<Vector2> {
    state.active_followers().map(|f| f.velocity).collect()
}

/// Runs the kinetic model. `observe` sees the initial pair and every pair
/// after a step.
#[allow(clippy::too_many_arguments)]
pub fn run_meso(
    mut ens: ParticleEnsemble,
    mut swarm: LeaderSwarm,
    scenario: &Scenario,
    params: &ModelParams,
    kinetic: &KineticConfig,
    controller: &mut Controller,
    source: &RandomSource,
    opts: &RunOptions,
    mut observe: impl FnMut(&ParticleEnsemble, &LeaderSwarm) -> Result<()>,
) -> Result<MesoOutcome> {
    kinetic.validate()?;
    let initial = ens.initial_mass();
    let mut rec = Recorder::new(kinetic.dt, initial, opts.consensus.is_some());
    let velocities = |e: &ParticleEnsemble| e.samples.iter().filter(|s| s.active).map(|s| s.velocity).collect();
    rec.push(&ens, scenario, || velocities(&ens));
    observe(&ens, &swarm)?;
    let mut evac = None;
    let mut aborted = false;
    loop {
        if ens.active_count() == 0 {
            evac.get_or_insert(ens.step);
            if opts.stop_when_evacuated {
                break;
            }
        }
        if ens.step >= opts.horizon_steps {
            break;
        }
        if evac.is_none() && opts.abort_at_time.is_some_and(|t| ens.step as f64 * kinetic.dt >= t) {
            aborted = true;
            break;
        }
        let controls = controller.meso_controls(ens.step, &swarm, kinetic.dt, scenario)?;
        let mut rng = source.stream(&[tag::KINETIC, ens.step]);
        (ens, swarm) = kinetic_step(&ens, &swarm, &controls, params, kinetic, scenario, &mut rng)?;
        rec.push(&ens, scenario, || velocities(&ens));
        observe(&ens, &swarm)?;
    }
    let metrics = rec.finish(&ens, ens.step, evac, opts.consensus);
    Ok(MesoOutcome { metrics, final_ensemble: ens, final_swarm: swarm, aborted })
}

/// Evacuation time of the microscopic model under a piecewise-constant
/// strategy, all candidates sharing one initial state and noise seed.
pub struct MicroEvacTime<'a> {
    pub scenario: &'a Scenario,
    pub params: &'a ModelParams,
    pub initial: &'a CrowdState,
    pub source: RandomSource,
    pub horizon_steps: u64,
}

impl MicroEvacTime<'_> {
    pub fn outcome(&self, strategy: &PiecewiseConstant, abort_at_time: Option<f64>) -> Result<MicroOutcome> {
        let mut controller = Controller::new(LeaderStrategy::PiecewiseConstant(strategy.clone()), self.source);
        let opts = RunOptions { abort_at_time, ..RunOptions::new(self.horizon_steps) };
        run_micro(self.initial.clone(), self.scenario, self.params, &mut controller, &self.source, &opts, |_| Ok(()))
    }
}

pub(crate) fn outcome_of(m: &RunMetrics, horizon_steps: u64) -> EvacuationOutcome {
    EvacuationOutcome {
        evacuation_step: m.evacuation_step,
        horizon_steps,
        dt: m.dt,
        remaining_fraction: 1.0 - m.evacuated_fraction,
    }
}

fn slots_reached(strategy: &PiecewiseConstant, steps_run: u64) -> usize {
    strategy.slot_at(steps_run.saturating_sub(1)) + 1
}

impl CompassObjective for MicroEvacTime<'_> {
    fn evaluate(&mut self, strategy: &PiecewiseConstant, bound: Option<f64>) -> Result<Evaluation> {
        let out = self.outcome(strategy, bound)?;
        let m = &out.metrics;
        let cost = if out.aborted { m.steps_run as f64 * m.dt } else { evac_time_cost(&outcome_of(m, self.horizon_steps)) };
        Ok(Evaluation { cost, slots_used: slots_reached(strategy, m.steps_run), aborted: out.aborted })
    }
}

/// Follower mass left at the final time of the kinetic model.
pub struct MesoRemainingMass<'a> {
    pub scenario: &'a Scenario,
    pub params: &'a ModelParams,
    pub kinetic: &'a KineticConfig,
    pub initial: &'a (ParticleEnsemble, LeaderSwarm),
    pub source: RandomSource,
    pub horizon_steps: u64,
}

impl MesoRemainingMass<'_> {
    pub fn outcome(&self, strategy: &PiecewiseConstant) -> Result<MesoOutcome> {
        let mut controller = Controller::new(LeaderStrategy::PiecewiseConstant(strategy.clone()), self.source);
        let (ens, swarm) = self.initial.clone();
        let opts = RunOptions::new(self.horizon_steps);
        run_meso(ens, swarm, self.scenario, self.params, self.kinetic, &mut controller, &self.source, &opts, |_, _| {
            Ok(())
        })
    }
}

impl CompassObjective for MesoRemainingMass<'_> {
    fn evaluate(&mut self, strategy: &PiecewiseConstant, _bound: Option<f64>) -> Result<Evaluation> {
        let out = self.outcome(strategy)?;
        let m = &out.metrics;
        Ok(Evaluation { cost: m.final_amount, slots_used: slots_reached(strategy, m.steps_run), aborted: false })
    }
}

/// Initial compass guess: constant velocity from each leader's initial
/// position toward the target.
pub fn initial_guess(
    leader_positions: &[Vector2],
    scenario: &Scenario,
    switch_interval: usize,
    horizon_steps: u64,
    speed: f64,
    u_bound: f64,
) -> Result<PiecewiseConstant> {
    PiecewiseConstant::toward_target(leader_positions, scenario.target, switch_interval, horizon_steps as usize, speed, u_bound)
}

/// Compass search with a stream derived from `source`.
pub fn optimize<O: CompassObjective>(
    objective: &mut O,
    init: &PiecewiseConstant,
    cfg: &CompassConfig,
    source: &RandomSource,
) -> Result<CompassResult> {
    let mut rng = source.stream(&[tag::COMPASS]);
    compass_search(objective, init, cfg, &mut rng)
}
