//! Leader strategies, cost functionals, compass search and MPC.

pub mod compass;
pub mod cost;
pub mod mpc;
pub mod strategy;

pub use compass::{compass_search, CompassConfig, CompassObjective, CompassRecord, CompassResult, Evaluation, FnObjective};
pub use cost::{evac_mass_cost, evac_time_cost, running_cost, CostWeights, EvacuationOutcome};
pub use mpc::{instantaneous_control, mpc_cost, mpc_gradient, mpc_step, ControlSequence, MpcConfig, MpcSolution};
pub use strategy::{go_to_target, smart_obstacle_control, LeaderStrategy, PiecewiseConstant};

use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::meso::LeaderSwarm;
use crate::micro::{CrowdState, LeaderState};
use crate::params::ModelParams;
use crate::rng::{tag, RandomSource};
use crate::scenario::Scenario;

/// Stateful evaluation of a strategy along one run (MPC warm starts,
/// per-step random streams of smart obstacles).
pub struct Controller {
    strategy: LeaderStrategy,
    source: RandomSource,
    warm: Option<ControlSequence>,
}

impl Controller {
    pub fn new(strategy: LeaderStrategy, source: RandomSource) -> Self {
        Self { strategy, source, warm: None }
    }

    pub fn strategy(&self) -> &LeaderStrategy {
        &self.strategy
    }

    fn open_loop(&self, step: u64, leaders: &[LeaderState], dt: f64, scenario: &Scenario) -> Result<Option<Vec<Vector2>>> {
        Ok(Some(match &self.strategy {
            LeaderStrategy::Idle => vec![Vector2::ZERO; leaders.len()],
            LeaderStrategy::PiecewiseConstant(pc) => {
                if pc.leaders() != leaders.len() {
                    return Err(Error::ControlDimension { expected: leaders.len(), got: pc.leaders() });
                }
                pc.controls_at(step).to_vec()
            }
            LeaderStrategy::GoToTarget => leaders.iter().map(|l| go_to_target(l.position, scenario.target)).collect(),
            LeaderStrategy::SmartObstacle { amplitude } => {
                let mut rng = self.source.stream(&[tag::LEADER_CONTROL, step]);
                leaders
                    .iter()
                    .map(|l| smart_obstacle_control(l.position, *amplitude, scenario.leader_region.as_ref(), dt, &mut rng))
                    .collect()
            }
            LeaderStrategy::Mpc { .. } => return Ok(None),
        }))
    }

    /// Controls for the microscopic state at its current step.
    pub fn micro_controls(&mut self, state: &CrowdState, params: &ModelParams, scenario: &Scenario) -> Result<Vec<Vector2>> {
        if let Some(u) = self.open_loop(state.step, &state.leaders, params.dt, scenario)? {
            return Ok(u);
        }
        let LeaderStrategy::Mpc { config, weights } = &self.strategy else { unreachable!() };
        let warm = self.warm.take().map(|mut seq| {
            seq.remove(0);
            let last = seq.last().cloned().unwrap_or_else(|| vec![Vector2::ZERO; state.leaders.len()]);
            seq.push(last);
            seq
        });
        let warm = warm.filter(|w| w.len() == config.horizon && w.iter().all(|r| r.len() == state.leaders.len()));
        let sol = mpc_step(state, config, weights, params, scenario, warm.as_ref())?;
        self.warm = Some(sol.sequence);
        Ok(sol.controls)
    }

    /// Controls for the kinetic leaders at `step`.
    pub fn meso_controls(&mut self, step: u64, swarm: &LeaderSwarm, dt: f64, scenario: &Scenario) -> Result<Vec<Vector2>> {
        self.open_loop(step, &swarm.leaders, dt, scenario)?
            .ok_or_else(|| Error::Unsupported("MPC is only available for the microscopic model".into()))
    }
}
