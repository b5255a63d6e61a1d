//! Cost functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::meso::ParticleEnsemble;
use crate::micro::CrowdState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub mu_f: f64,
    pub mu_l: f64,
    pub nu: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { mu_f: 1.0, mu_l: 1e-5, nu: 1e-5 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("mu_f", self.mu_f), ("mu_l", self.mu_l), ("nu", self.nu)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("weights.{name}"), "must be finite and non-negative"));
            }
        }
        if self.mu_f == 0.0 && self.mu_l == 0.0 && self.nu == 0.0 {
            return Err(Error::invalid("weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

/// Multiplier of `horizon * dt` applied to the unevacuated fraction.
pub const NON_EVACUATION_PENALTY: f64 = 10.0;

/// How a run ended, enough to price its evacuation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvacuationOutcome {
    /// First step at which no follower was left, if any.
    pub evacuation_step: Option<u64>,
    pub horizon_steps: u64,
    pub dt: f64,
    /// Followers (or mass) still in the domain at the horizon, relative to
    /// the initial amount.
    pub remaining_fraction: f64,
}

/// Evacuation time; runs that do not finish cost the horizon plus a penalty
/// proportional to what is left.
pub fn evac_time_cost(outcome: &EvacuationOutcome) -> f64 {
    match outcome.evacuation_step {
        Some(step) => step as f64 * outcome.dt,
        None => {
            let horizon = outcome.horizon_steps as f64 * outcome.dt;
            horizon + NON_EVACUATION_PENALTY * horizon * outcome.remaining_fraction
        }
    }
}

/// Stage cost split into its follower-target, follower-leader and control
/// parts, in that order.
pub fn running_cost_terms(state: &CrowdState, controls: &[Vector2], weights: &CostWeights, target: Vector2) -> [f64; 3] {
    let mut to_target = 0.0;
    let mut to_leaders = 0.0;
    let leaders: Vec<Vector2> = state.active_leaders().map(|l| l.position).collect();
    for f in state.active_followers() {
        to_target += f.position.distance_sq(target);
        for y in &leaders {
            to_leaders += f.position.distance_sq(*y);
        }
    }
    let effort: f64 = controls.iter().map(|u| u.norm_sq()).sum();
    [weights.mu_f * to_target, weights.mu_l * to_leaders, weights.nu * effort]
}

/// `mu_F sum |x_i - x^tau|^2 + mu_L sum_i sum_k |x_i - y_k|^2 + nu sum |u_k|^2`
/// over active followers.
pub fn running_cost(state: &CrowdState, controls: &[Vector2], weights: &CostWeights, target: Vector2) -> f64 {
    running_cost_terms(state, controls, weights, target).iter().sum()
}

/// Follower mass left in the domain (to be minimized).
pub fn evac_mass_cost(ens: &ParticleEnsemble) -> f64 {
    ens.mass()
}
