//! Interaction kernels and neighbourhood queries shared by both scales.

use crate::geometry::Vector2;
use crate::scenario::Scenario;

/// 1 where the target is not visible (exploration), 0 inside the
/// visibility region (evacuation).
#[inline]
pub fn visibility_indicator(x: Vector2, scenario: &Scenario) -> f64 {
    if scenario.visibility.contains(x) {
        0.0
    } else {
        1.0
    }
}

/// Metrical repulsion direction field `exp(-|x'-x|^gamma) (x'-x)/|x'-x|`,
/// supported on `0 < |x'-x| <= r`.
#[inline]
pub fn repulsion_kernel(x: Vector2, x_other: Vector2, gamma: f64, r: f64) -> Vector2 {
    let d = x_other - x;
    let dist_sq = d.norm_sq();
    if dist_sq == 0.0 || dist_sq > r * r {
        return Vector2::ZERO;
    }
    let dist = dist_sq.sqrt();
    d * (decay(dist, gamma) / dist)
}

/// `exp(-dist^gamma)`, with the common `gamma = 1` case kept cheap.
#[inline]
pub(crate) fn decay(dist: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        (-dist).exp()
    } else {
        (-dist.powf(gamma)).exp()
    }
}

/// Minimal closed ball around a point holding at least `N` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologicalBall {
    pub radius: f64,
    pub members: Vec<usize>,
    pub n_star: usize,
    /// Set when fewer than `N` positions were available.
    pub degenerate: bool,
}

/// Ball data needed by the alignment term: squared radius for membership
/// tests and the (possibly mass-weighted) agent count inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallContext {
    pub radius_sq: f64,
    pub n_star: f64,
}

impl BallContext {
    #[inline]
    pub fn contains(&self, x: Vector2, other: Vector2) -> bool {
        x.distance_sq(other) <= self.radius_sq
    }
}

impl From<&TopologicalBall> for BallContext {
    fn from(b: &TopologicalBall) -> Self {
        BallContext { radius_sq: b.radius * b.radius, n_star: b.n_star as f64 }
    }
}

/// Minimal ball centred at `x` containing at least `n_topo` of
/// `all_positions` (the querying agent included if it is in the list).
/// Ties at the boundary are all members.
pub fn topological_ball(x: Vector2, all_positions: &[Vector2], n_topo: usize) -> TopologicalBall {
    let mut dist_sq: Vec<f64> = all_positions.iter().map(|p| x.distance_sq(*p)).collect();
    let degenerate = n_topo > dist_sq.len() || n_topo == 0;
    let radius_sq = if dist_sq.is_empty() {
        0.0
    } else if degenerate {
        log::warn!(
            "topological ball asked for {n_topo} neighbours among {} positions; using all",
            dist_sq.len()
        );
        dist_sq.iter().copied().fold(0.0, f64::max)
    } else {
        kth_smallest(&mut dist_sq, n_topo - 1)
    };
    let members: Vec<usize> = all_positions
        .iter()
        .enumerate()
        .filter(|(_, p)| x.distance_sq(**p) <= radius_sq)
        .map(|(i, _)| i)
        .collect();
    TopologicalBall { radius: radius_sq.sqrt(), n_star: members.len(), members, degenerate }
}

/// `k`-th smallest value (0-based); reorders `values`.
#[inline]
pub(crate) fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *kth
}
