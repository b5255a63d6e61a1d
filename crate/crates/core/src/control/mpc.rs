//! Model predictive control of the leaders.
//!
//! The prediction model is the noise-free microscopic step; leaders are not
//! removed at the exit inside predictions. The finite-horizon problem is
//! solved by projected coordinate descent with central finite differences.
//! Costs are kept split per stage and per term so that differences between
//! nearby control sequences do not lose digits to the large follower-target
//! sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::micro::{leader_velocity, step_with, CrowdState, Noise};
use crate::params::ModelParams;
use crate::scenario::Scenario;

use super::cost::{running_cost_terms, CostWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// Number of stages `N_mpc` (at least 2).
    pub horizon: usize,
    /// Maximum coordinate-descent sweeps per call.
    pub inner_iterations: usize,
    pub u_bound: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    1e-3
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 2, inner_iterations: 50, u_bound: 1.0, fd_step: default_fd_step() }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::invalid("mpc.horizon", "must be at least 2"));
        }
        if self.inner_iterations == 0 {
            return Err(Error::invalid("mpc.inner_iterations", "must be positive"));
        }
        if !(self.u_bound > 0.0 && self.u_bound.is_finite()) {
            return Err(Error::invalid("mpc.u_bound", "must be positive"));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::invalid("mpc.fd_step", "must be positive"));
        }
        Ok(())
    }
}

/// Halvings of a rejected Newton or sign step before giving up on a coordinate.
const MAX_BACKTRACKS: usize = 4;

/// A sweep improving the cost by less than this fraction ends the descent.
pub const SWEEP_TOLERANCE: f64 = 1e-6;

/// Control sequence `seq[stage][leader]`.
pub type ControlSequence = Vec<Vec<Vector2>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// First stage of the optimal sequence: the control to apply now.
    pub controls: Vec<Vector2>,
    pub sequence: ControlSequence,
    pub cost: f64,
    pub sweeps: usize,
}

/// Noise-free prediction step; leaders never leave the domain.
pub fn predict_step(
    state: &CrowdState,
    controls: &[Vector2],
    params: &ModelParams,
    scenario: &Scenario,
) -> Result<CrowdState> {
    let mut next = step_with(state, controls, params, scenario, Noise::Zero)?;
    for (n, o) in next.leaders.iter_mut().zip(&state.leaders) {
        n.evacuated = o.evacuated;
    }
    Ok(next)
}

struct Problem<'a> {
    params: &'a ModelParams,
    scenario: &'a Scenario,
    weights: &'a CostWeights,
}

/// States and per-stage cost terms of one rollout.
#[derive(Clone)]
struct Rollout {
    states: Vec<CrowdState>,
    terms: Vec<[f64; 3]>,
}

impl Problem<'_> {
    fn rollout(&self, start: &CrowdState, seq: &ControlSequence) -> Result<Rollout> {
        let mut states = Vec::with_capacity(seq.len());
        states.push(start.clone());
        let mut terms = Vec::with_capacity(seq.len());
        for n in 0..seq.len() {
            terms.push(running_cost_terms(&states[n], &seq[n], self.weights, self.scenario.target));
            if n + 1 < seq.len() {
                let next = predict_step(&states[n], &seq[n], self.params, self.scenario)?;
                states.push(next);
            }
        }
        Ok(Rollout { states, terms })
    }

    /// Re-rolls stages `from..` with a modified sequence, reusing the
    /// states up to `from`.
    fn rollout_from(&self, base: &Rollout, from: usize, seq: &ControlSequence) -> Result<Rollout> {
        let mut states: Vec<CrowdState> = base.states[..=from].to_vec();
        let mut terms: Vec<[f64; 3]> = base.terms[..from].to_vec();
        for n in from..seq.len() {
            terms.push(running_cost_terms(&states[n], &seq[n], self.weights, self.scenario.target));
            if n + 1 < seq.len() {
                let next = predict_step(&states[n], &seq[n], self.params, self.scenario)?;
                states.push(next);
            }
        }
        Ok(Rollout { states, terms })
    }
}

/// `cost(a) - cost(b)` over stages `from..`, summed term by term.
fn difference(a: &Rollout, b: &Rollout, from: usize) -> f64 {
    let mut d = 0.0;
    for n in from..a.terms.len() {
        for c in 0..3 {
            d += a.terms[n][c] - b.terms[n][c];
        }
    }
    d
}

fn total(r: &Rollout) -> f64 {
    r.terms.iter().flatten().sum()
}

/// Finite-horizon cost `sum_{n=0}^{N-1} l(x_n, y_n, u_n)` of a sequence.
pub fn mpc_cost(
    state: &CrowdState,
    seq: &ControlSequence,
    weights: &CostWeights,
    params: &ModelParams,
    scenario: &Scenario,
) -> Result<f64> {
    let p = Problem { params, scenario, weights };
    Ok(total(&p.rollout(state, seq)?))
}

/// Central finite-difference gradient, ordered stage, leader, axis.
pub fn mpc_gradient(
    state: &CrowdState,
    seq: &ControlSequence,
    weights: &CostWeights,
    params: &ModelParams,
    scenario: &Scenario,
    h: f64,
) -> Result<Vec<f64>> {
    let p = Problem { params, scenario, weights };
    let base = p.rollout(state, seq)?;
    let mut grad = Vec::new();
    for j in 0..seq.len() {
        for k in 0..seq[j].len() {
            for axis in 0..2 {
                let mut plus = seq.clone();
                *plus[j][k].component_mut(axis) += h;
                let mut minus = seq.clone();
                *minus[j][k].component_mut(axis) -= h;
                let rp = p.rollout_from(&base, j, &plus)?;
                let rm = p.rollout_from(&base, j, &minus)?;
                grad.push((difference(&rp, &base, j) - difference(&rm, &base, j)) / (2.0 * h));
            }
        }
    }
    Ok(grad)
}

fn check_sequence(seq: &ControlSequence, cfg: &MpcConfig, leaders: usize) -> Result<()> {
    if seq.len() != cfg.horizon {
        return Err(Error::invalid("mpc.warm_start", format!("expected {} stages, got {}", cfg.horizon, seq.len())));
    }
    if let Some(row) = seq.iter().find(|r| r.len() != leaders) {
        return Err(Error::ControlDimension { expected: leaders, got: row.len() });
    }
    Ok(())
}

/// Solves the finite-horizon problem from `state` and returns the first
/// control. The search starts from the better of the zero sequence and
/// `warm_start`, so the result is never worse than doing nothing.
pub fn mpc_step(
    state: &CrowdState,
    cfg: &MpcConfig,
    weights: &CostWeights,
    params: &ModelParams,
    scenario: &Scenario,
    warm_start: Option<&ControlSequence>,
) -> Result<MpcSolution> {
    cfg.validate()?;
    let leaders = state.leaders.len();
    let p = Problem { params, scenario, weights };
    let zero: ControlSequence = vec![vec![Vector2::ZERO; leaders]; cfg.horizon];
    let mut seq = zero.clone();
    let mut best = p.rollout(state, &seq)?;
    if let Some(w) = warm_start {
        check_sequence(w, cfg, leaders)?;
        let clipped: ControlSequence =
            w.iter().map(|row| row.iter().map(|u| u.clamp_box(cfg.u_bound)).collect()).collect();
        let r = p.rollout(state, &clipped)?;
        if difference(&r, &best, 0) < 0.0 {
            seq = clipped;
            best = r;
        }
    }
    // the last control only enters its own effort term, so its optimum is zero
    let last = cfg.horizon - 1;
    if seq[last].iter().any(|u| *u != Vector2::ZERO) {
        seq[last].fill(Vector2::ZERO);
        best = p.rollout_from(&best, last, &seq)?;
    }
    let h = cfg.fd_step;
    let bound = cfg.u_bound;
    let mut sweeps = 0;
    for _ in 0..cfg.inner_iterations {
        sweeps += 1;
        let mut gain = 0.0;
        for j in 0..last {
            for k in 0..leaders {
                if state.leaders[k].evacuated {
                    continue;
                }
                for axis in 0..2 {
                    let u0 = seq[j][k].component(axis);
                    let probe = |val: f64, seq: &ControlSequence| -> Result<(Rollout, f64)> {
                        let mut s = seq.clone();
                        *s[j][k].component_mut(axis) = val;
                        let r = p.rollout_from(&best, j, &s)?;
                        let d = difference(&r, &best, j);
                        Ok((r, d))
                    };
                    // best admissible point seen so far for this coordinate
                    let mut pick: Option<(f64, Rollout, f64)> = None;
                    let consider = |val: f64, r: Rollout, d: f64, pick: &mut Option<(f64, Rollout, f64)>| {
                        if d < 0.0 && pick.as_ref().is_none_or(|b| d < b.2) {
                            *pick = Some((val, r, d));
                        }
                    };
                    if u0 + h <= bound && u0 - h >= -bound {
                        let (rp, dp) = probe(u0 + h, &seq)?;
                        let (rm, dm) = probe(u0 - h, &seq)?;
                        let g = (dp - dm) / (2.0 * h);
                        let curv = (dp + dm) / (h * h);
                        consider(u0 + h, rp, dp, &mut pick);
                        consider(u0 - h, rm, dm, &mut pick);
                        if g != 0.0 {
                            let mut step = if curv > 0.0 { -g / curv } else { -g.signum() * 2.0 * bound };
                            for _ in 0..MAX_BACKTRACKS {
                                let val = (u0 + step).clamp(-bound, bound);
                                if val == u0 {
                                    break;
                                }
                                let (r, d) = probe(val, &seq)?;
                                let done = d < 0.0;
                                consider(val, r, d, &mut pick);
                                if done {
                                    break;
                                }
                                step *= 0.5;
                            }
                        }
                    } else {
                        // on the boundary: only the inward direction is admissible
                        let inward = if u0 + h > bound { -1.0 } else { 1.0 };
                        let (r, d) = probe(u0 + inward * h, &seq)?;
                        let descent = d < 0.0;
                        consider(u0 + inward * h, r, d, &mut pick);
                        if descent {
                            let val = (u0 + inward * 0.25 * bound).clamp(-bound, bound);
                            let (r, d) = probe(val, &seq)?;
                            consider(val, r, d, &mut pick);
                        }
                    }
                    if let Some((val, r, d)) = pick {
                        *seq[j][k].component_mut(axis) = val;
                        best = r;
                        gain -= d;
                    }
                }
            }
        }
        if gain <= SWEEP_TOLERANCE * total(&best).abs() {
            break;
        }
    }
    let cost = total(&best);
    Ok(MpcSolution { controls: seq[0].clone(), sequence: seq, cost, sweeps })
}

/// Closed-form minimizer of the two-stage problem in open space.
///
/// Follower positions one step ahead do not depend on the control, and the
/// leader position is `y + dt (K + u)`, so the cost is an isotropic
/// quadratic in each `u_k`; clipping the unconstrained minimizer to the box
/// is exact.
pub fn instantaneous_control(
    state: &CrowdState,
    weights: &CostWeights,
    params: &ModelParams,
    scenario: &Scenario,
    u_bound: f64,
) -> Result<Vec<Vector2>> {
    let zero = vec![Vector2::ZERO; state.leaders.len()];
    let next = predict_step(state, &zero, params, scenario)?;
    let mut sum = Vector2::ZERO;
    let mut n = 0usize;
    for f in next.active_followers() {
        sum += f.position;
        n += 1;
    }
    let dt = params.dt;
    let denom = weights.nu + weights.mu_l * dt * dt * n as f64;
    let mut out = Vec::with_capacity(state.leaders.len());
    for k in 0..state.leaders.len() {
        if state.leaders[k].evacuated || denom == 0.0 {
            out.push(Vector2::ZERO);
            continue;
        }
        let drift = state.leaders[k].position + leader_velocity(k, state, Vector2::ZERO, params) * dt;
        let u = (sum - drift * n as f64) * (weights.mu_l * dt / denom);
        out.push(u.clamp_box(u_bound));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micro::{FollowerState, LeaderState};
    use crate::scenario::ExitRule;

    fn v(x: f64, y: f64) -> Vector2 {
        Vector2::new(x, y)
    }

    fn open() -> (ModelParams, Scenario) {
        let mut p = ModelParams::setting1();
        p.noise_var = 0.0;
        let mut s = Scenario::setting1();
        s.exit = ExitRule::Disabled;
        (p, s)
    }

    #[test]
    fn pure_control_penalty_gives_zero() {
        let (p, s) = open();
        let st = CrowdState::new(
            vec![FollowerState::new(v(20.0, 10.0), Vector2::ZERO)],
            vec![LeaderState::new(v(15.0, 10.0))],
        );
        let w = CostWeights { mu_f: 0.0, mu_l: 0.0, nu: 1.0 };
        let sol = mpc_step(&st, &MpcConfig { horizon: 3, ..Default::default() }, &w, &p, &s, None).unwrap();
        assert_eq!(sol.controls, vec![Vector2::ZERO]);
    }

    #[test]
    fn two_stage_matches_grid_search() {
        let (p, s) = open();
        let st = CrowdState::new(
            vec![FollowerState::new(v(20.0, 12.0), Vector2::ZERO)],
            vec![LeaderState::new(v(15.0, 10.0))],
        );
        let w = CostWeights { mu_f: 1.0, mu_l: 1.0, nu: 1e-3 };
        let closed = instantaneous_control(&st, &w, &p, &s, 1.0).unwrap()[0];
        let mut best = (f64::INFINITY, Vector2::ZERO);
        for i in 0..=200 {
            for j in 0..=200 {
                let u = v(-1.0 + 0.01 * i as f64, -1.0 + 0.01 * j as f64);
                let c = mpc_cost(&st, &vec![vec![u], vec![Vector2::ZERO]], &w, &p, &s).unwrap();
                if c < best.0 {
                    best = (c, u);
                }
            }
        }
        assert!(closed.distance(best.1) < 0.011, "{closed:?} vs {:?}", best.1);
        assert_eq!(closed.x, 1.0);
        let sol = mpc_step(&st, &MpcConfig::default(), &w, &p, &s, None).unwrap();
        assert!(sol.controls[0].distance(closed) < 1e-6);
    }

    #[test]
    fn solution_never_worse_than_zero_and_in_box() {
        let (p, s) = open();
        let st = CrowdState::new(
            (0..5).map(|i| FollowerState::new(v(20.0 + 0.3 * i as f64, 10.0), v(0.1, 0.0))).collect(),
            vec![LeaderState::new(v(18.0, 9.0)), LeaderState::new(v(18.0, 11.0))],
        );
        let w = CostWeights::default();
        let cfg = MpcConfig { horizon: 4, inner_iterations: 5, ..Default::default() };
        let sol = mpc_step(&st, &cfg, &w, &p, &s, None).unwrap();
        let zero = mpc_cost(&st, &vec![vec![Vector2::ZERO; 2]; 4], &w, &p, &s).unwrap();
        assert!(sol.cost <= zero);
        assert!(sol.sequence.iter().flatten().all(|u| u.x.abs() <= 1.0 && u.y.abs() <= 1.0));
    }
}
