//! Modified compass search over piecewise-constant leader strategies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::strategy::PiecewiseConstant;

/// Result of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    /// Leading slots that influenced the cost; perturbing later slots
    /// cannot change it.
    pub slots_used: usize,
    /// Set when the evaluation stopped early because the cost could no
    /// longer drop below the bound it was given; `cost` is then a lower
    /// bound.
    pub aborted: bool,
}

/// Deterministic cost of a strategy (common random numbers are the
/// implementor's job).
pub trait CompassObjective {
    /// `bound`: the caller only cares whether the cost is strictly below
    /// it, so the evaluation may stop as soon as that is ruled out.
    fn evaluate(&mut self, strategy: &PiecewiseConstant, bound: Option<f64>) -> Result<Evaluation>;
}

/// Plain function objective using every slot.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&PiecewiseConstant) -> Result<f64>> CompassObjective for FnObjective<F> {
    fn evaluate(&mut self, strategy: &PiecewiseConstant, _bound: Option<f64>) -> Result<Evaluation> {
        Ok(Evaluation { cost: (self.0)(strategy)?, slots_used: strategy.slots(), aborted: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassConfig {
    pub iterations: usize,
    pub max_variation: f64,
    /// Stop after this many consecutive rejections.
    pub stall_limit: usize,
}

impl Default for CompassConfig {
    fn default() -> Self {
        Self { iterations: 50, max_variation: 1.0, stall_limit: 200 }
    }
}

impl CompassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_variation > 0.0 && self.max_variation.is_finite()) {
            return Err(Error::invalid("compass.max_variation", "must be positive"));
        }
        if self.stall_limit == 0 {
            return Err(Error::invalid("compass.stall_limit", "must be positive"));
        }
        Ok(())
    }
}

/// One line of the cost history: the incumbent cost after `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompassRecord {
    pub iteration: usize,
    pub cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompassResult {
    pub strategy: PiecewiseConstant,
    pub cost: f64,
    /// Entry 0 is the initial guess; costs are non-increasing.
    pub history: Vec<CompassRecord>,
    /// Cost of each candidate (a lower bound for aborted evaluations).
    pub candidate_costs: Vec<f64>,
}

/// Perturbs one scalar of the incumbent per iteration by a uniform draw in
/// `[-max_variation, max_variation]`, clips it to the box and keeps the
/// change iff the cost strictly decreases.
pub fn compass_search<O: CompassObjective + ?Sized>(
    objective: &mut O,
    init: &PiecewiseConstant,
    cfg: &CompassConfig,
    rng: &mut Stream,
) -> Result<CompassResult> {
    cfg.validate()?;
    let first = objective.evaluate(init, None)?;
    let mut best = init.clone();
    let mut best_cost = first.cost;
    let mut slots_used = first.slots_used.clamp(1, init.slots());
    let mut history = vec![CompassRecord { iteration: 0, cost: best_cost, accepted: true }];
    let mut candidate_costs = Vec::with_capacity(cfg.iterations);
    let leaders = init.leaders();
    if leaders == 0 {
        return Ok(CompassResult { strategy: best, cost: best_cost, history, candidate_costs });
    }
    let mut stall = 0usize;
    for it in 1..=cfg.iterations {
        let slot = rng.random_range(0..slots_used);
        let leader = rng.random_range(0..leaders);
        let axis = rng.random_range(0..2usize);
        let delta = rng.random_range(-cfg.max_variation..=cfg.max_variation);
        let mut cand = best.clone();
        let c = cand.velocities[slot][leader].component_mut(axis);
        *c = (*c + delta).clamp(-cand.u_bound, cand.u_bound);
        let eval = objective.evaluate(&cand, Some(best_cost))?;
        candidate_costs.push(eval.cost);
        let accepted = !eval.aborted && eval.cost < best_cost;
        if accepted {
            best = cand;
            best_cost = eval.cost;
            slots_used = eval.slots_used.clamp(1, best.slots());
            stall = 0;
        } else {
            stall += 1;
        }
        log::debug!("compass iteration {it}: candidate {} incumbent {best_cost} accepted {accepted}", eval.cost);
        history.push(CompassRecord { iteration: it, cost: best_cost, accepted });
        if stall >= cfg.stall_limit {
            log::info!("compass search stalled after {it} iterations");
            break;
        }
    }
    Ok(CompassResult { strategy: best, cost: best_cost, history, candidate_costs })
}
