//! Mesoscopic follower density coupled to microscopic leaders.
//!
//! The follower density is carried by weighted sample particles evolved with
//! a binary-interaction Monte Carlo scheme under the grazing scaling
//! `eta = eps`, `lambda = 1/(eps m)`, `varsigma^2 = sigma^2/eps`. Leaders are
//! integrated with explicit Euler, their repulsion integral being an exact
//! quadrature over the active samples.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rect, Vector2};
use crate::kernels::{visibility_indicator, BallContext};
use crate::metrics::FollowerPopulation;
use crate::micro::{leader_repulsion, pair_force, propulsion, wall_resolution, CrowdState, LeaderState};
use crate::output::fmt9;
use crate::params::ModelParams;
use crate::rng::{tag, truncated_normal_vector, RandomSource, Stream};
use crate::scenario::{Region, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub position: Vector2,
    pub velocity: Vector2,
    pub active: bool,
}

/// Weighted sample representation of the follower density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub samples: Vec<Sample>,
    /// Mass carried by each sample, `m^F(0) / N_s`.
    pub particle_weight: f64,
    pub time: f64,
    pub step: u64,
}

impl ParticleEnsemble {
    /// Ensemble of `samples` sharing `total_mass` equally.
    pub fn new(samples: Vec<Sample>, total_mass: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("meso.samples", "ensemble needs at least one sample"));
        }
        if !(total_mass >= 0.0 && total_mass.is_finite()) {
            return Err(Error::invalid("meso.total_mass", "must be finite and non-negative"));
        }
        let particle_weight = total_mass / samples.len() as f64;
        Ok(Self { samples, particle_weight, time: 0.0, step: 0 })
    }

    /// Empirical measure of a crowd: one unit-weight sample per follower.
    pub fn from_crowd(state: &CrowdState) -> Self {
        let samples = state
            .followers
            .iter()
            .map(|f| Sample { position: f.position, velocity: f.velocity, active: !f.evacuated })
            .collect();
        Self { samples, particle_weight: 1.0, time: state.time, step: state.step }
    }

    /// Samples drawn uniformly in the scenario spawn box, total mass `N^F`.
    pub fn spawn(scenario: &Scenario, n_samples: usize, source: &RandomSource) -> Result<(Self, LeaderSwarm)> {
        let mut rng = source.stream(&[tag::SPAWN]);
        let region = scenario.follower_spawn.region;
        let samples = (0..n_samples)
            .map(|_| {
                let p = Vector2::new(
                    rng.random_range(region.min.x..=region.max.x),
                    rng.random_range(region.min.y..=region.max.y),
                );
                let v = scenario.follower_spawn.velocity.sample(&mut rng);
                Sample { position: p, velocity: v, active: true }
            })
            .collect();
        let ens = Self::new(samples, scenario.followers as f64)?;
        let leaders = scenario.leader_layout.place(scenario.leaders, &mut rng)?;
        Ok((ens, LeaderSwarm::new(leaders.into_iter().map(LeaderState::new).collect())))
    }

    pub fn active_count(&self) -> usize {
        self.samples.iter().filter(|s| s.active).count()
    }

    /// Current follower mass `m^F`.
    pub fn mass(&self) -> f64 {
        self.active_count() as f64 * self.particle_weight
    }

    /// Mass at creation.
    pub fn initial_mass(&self) -> f64 {
        self.samples.len() as f64 * self.particle_weight
    }
}

impl FollowerPopulation for ParticleEnsemble {
    fn active_amount(&self) -> f64 {
        self.mass()
    }

    fn amount_in(&self, region: &Region) -> f64 {
        self.samples.iter().filter(|s| s.active && region.contains(s.position)).count() as f64 * self.particle_weight
    }
}

/// Leaders at the kinetic scale: unit point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSwarm {
    pub leaders: Vec<LeaderState>,
}

impl LeaderSwarm {
    pub fn new(leaders: Vec<LeaderState>) -> Self {
        Self { leaders }
    }

    /// `m^L`, the number of leaders still in the domain.
    pub fn mass(&self) -> f64 {
        self.leaders.iter().filter(|l| !l.evacuated).count() as f64
    }
}

/// Interaction strengths, frequencies and noise variance of the grazing
/// scaling for given masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticScaling {
    pub epsilon: f64,
    pub eta_f: f64,
    pub eta_l: f64,
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub varsigma_sq: f64,
}

impl KineticScaling {
    pub fn new(epsilon: f64, mass_f: f64, mass_l: f64, sigma_sq: f64) -> Self {
        Self {
            epsilon,
            eta_f: epsilon,
            eta_l: epsilon,
            lambda_f: 1.0 / (epsilon * mass_f),
            lambda_l: 1.0 / (epsilon * mass_l),
            varsigma_sq: sigma_sq / epsilon,
        }
    }

    /// Probability that a candidate follower pair interacts in one step.
    pub fn follower_probability(&self, dt: f64, mass_f: f64) -> f64 {
        dt * self.lambda_f * mass_f
    }

    /// Probability that a sample meets a leader in one step.
    pub fn leader_probability(&self, dt: f64, mass_l: f64) -> f64 {
        dt * self.lambda_l * mass_l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KineticMode {
    /// Random pairing, interactions accepted with probability `dt/eps`.
    MonteCarlo,
    /// Every interaction taken with probability one and averaged over all
    /// partners, noise off. Reproduces the microscopic step on an
    /// empirical measure.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub samples: usize,
    /// Samples used to locate topological balls.
    pub ball_subsample: usize,
    /// Coefficient in front of the noise; defaults to `C_z`.
    #[serde(default)]
    pub noise_coefficient: Option<f64>,
    /// Noise draws are truncated at this many standard deviations.
    pub noise_cut: f64,
    pub mode: KineticMode,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            dt: 0.01,
            samples: 10_000,
            ball_subsample: 1000,
            noise_coefficient: None,
            noise_cut: 5.0,
            mode: KineticMode::MonteCarlo,
        }
    }
}

impl KineticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("meso.epsilon", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("meso.dt", "must be positive"));
        }
        if self.mode == KineticMode::MonteCarlo && self.dt / self.epsilon > 1.0 {
            return Err(Error::invalid(
                "meso.dt",
                format!("interaction probability dt/epsilon = {} exceeds 1", self.dt / self.epsilon),
            ));
        }
        if self.samples == 0 {
            return Err(Error::invalid("meso.samples", "must be positive"));
        }
        if self.ball_subsample == 0 {
            return Err(Error::invalid("meso.ball_subsample", "must be positive"));
        }
        if !(self.noise_cut > 0.0) {
            return Err(Error::invalid("meso.noise_cut", "must be positive"));
        }
        if let Some(c) = self.noise_coefficient {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::invalid("meso.noise_coefficient", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn noise_coefficient(&self, params: &ModelParams) -> f64 {
        self.noise_coefficient.unwrap_or(params.c_noise)
    }
}

/// Velocity updates of a follower pair: `v* = v + eta [theta C xi + S + m^F H]`
/// for each side, `xi_p` and `xi_q` independent.
#[allow(clippy::too_many_arguments)]
pub fn binary_follower_interaction(
    p: &Sample,
    q: &Sample,
    xi_p: Vector2,
    xi_q: Vector2,
    noise_coefficient: f64,
    eta: f64,
    mass_f: f64,
    ball_p: &BallContext,
    ball_q: &BallContext,
    params: &ModelParams,
    scenario: &Scenario,
) -> (Vector2, Vector2) {
    let dp = follower_increment(p, q, xi_p, noise_coefficient, eta, mass_f, ball_p, params, scenario);
    let dq = follower_increment(q, p, xi_q, noise_coefficient, eta, mass_f, ball_q, params, scenario);
    (p.velocity + dp, q.velocity + dq)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn follower_increment(
    me: &Sample,
    other: &Sample,
    xi: Vector2,
    noise_coefficient: f64,
    eta: f64,
    mass_f: f64,
    ball: &BallContext,
    params: &ModelParams,
    scenario: &Scenario,
) -> Vector2 {
    let theta = visibility_indicator(me.position, scenario);
    let s = propulsion(theta, me.position, me.velocity, Vector2::ZERO, params, scenario.target);
    let h = pair_force(me.position, me.velocity, other.position, other.velocity, theta, ball, params);
    (xi * (theta * noise_coefficient) + s + h * mass_f) * eta
}

/// `v** = v + eta^L m^L H^L`; the leader is left untouched.
pub fn binary_leader_interaction(
    p: &Sample,
    leader: &LeaderState,
    eta: f64,
    mass_l: f64,
    ball: &BallContext,
    params: &ModelParams,
    scenario: &Scenario,
) -> Vector2 {
    p.velocity + leader_increment(p, leader, eta, mass_l, ball, params, scenario)
}

#[inline]
fn leader_increment(
    p: &Sample,
    leader: &LeaderState,
    eta: f64,
    mass_l: f64,
    ball: &BallContext,
    params: &ModelParams,
    scenario: &Scenario,
) -> Vector2 {
    let theta = visibility_indicator(p.position, scenario);
    pair_force(p.position, p.velocity, leader.position, leader.velocity, theta, ball, params) * (eta * mass_l)
}

const BOUND_REFINE: usize = 2;

/// Area of the central 80% box of a point cloud, rescaled to the full cloud.
fn robust_area(points: &[Vector2]) -> f64 {
    let n = points.len();
    if n < 10 {
        let (mut lo, mut hi) = (Vector2::new(f64::MAX, f64::MAX), Vector2::new(f64::MIN, f64::MIN));
        for p in points {
            lo = Vector2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vector2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        return if n == 0 { 0.0 } else { (hi.x - lo.x) * (hi.y - lo.y) };
    }
    let spread = |mut v: Vec<f64>| {
        let (a, b) = (n / 10, n - 1 - n / 10);
        let lo = *v.select_nth_unstable_by(a, |p, q| p.total_cmp(q)).1;
        let hi = *v.select_nth_unstable_by(b, |p, q| p.total_cmp(q)).1;
        hi - lo
    };
    spread(points.iter().map(|p| p.x).collect()) * spread(points.iter().map(|p| p.y).collect()) / 0.64
}

/// Ball that never contains anything: used where alignment is off.
const NO_BALL: BallContext = BallContext { radius_sq: -1.0, n_star: 1.0 };

/// Spatial hash over a set of equally weighted points plus unit-weight
/// leaders, answering "minimal closed ball of mass at least `N`" queries.
pub(crate) struct BallIndex {
    points: Vec<Vector2>,
    cell_start: Vec<u32>,
    origin: Vector2,
    h: f64,
    nx: usize,
    ny: usize,
    weight: f64,
    leaders: Vec<Vector2>,
    n_topo: f64,
    total_mass: f64,
    /// Lazily filled radius at the centres of a grid `BOUND_REFINE` times
    /// finer than the point grid.
    cell_radius: Vec<f64>,
    scratch: Vec<f64>,
    leader_scratch: Vec<f64>,
}

impl BallIndex {
    pub(crate) fn new(points: &[Vector2], weight: f64, leaders: &[Vector2], n_topo: usize) -> Self {
        let n = points.len();
        let (mut lo, mut hi) = (Vector2::new(f64::MAX, f64::MAX), Vector2::new(f64::MIN, f64::MIN));
        for p in points {
            lo = Vector2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vector2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if n == 0 {
            lo = Vector2::ZERO;
            hi = Vector2::ZERO;
        }
        // about a quarter of the ball's points per cell, sized on the bulk
        // of the cloud so that stray points do not coarsen the grid
        let per_cell = ((n_topo as f64 / weight.max(1e-300)) / 4.0).clamp(1.0, 64.0);
        let area = robust_area(points).max(1e-12);
        let mut h = (area * per_cell / n.max(1) as f64).sqrt();
        if !(h > 0.0 && h.is_finite()) {
            h = 1.0;
        }
        // at most about two cells per point
        let max_cells = (2 * n).max(64) as f64;
        let bbox = ((hi.x - lo.x) + h) * ((hi.y - lo.y) + h);
        if bbox / (h * h) > max_cells {
            h = (bbox / max_cells).sqrt();
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        h = h.max(span / 512.0).max(1e-9);
        let nx = (((hi.x - lo.x) / h).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / h).floor() as usize + 1).max(1);
        let cell_of = |p: &Vector2| -> usize {
            let cx = (((p.x - lo.x) / h) as usize).min(nx - 1);
            let cy = (((p.y - lo.y) / h) as usize).min(ny - 1);
            cy * nx + cx
        };
        let mut counts = vec![0u32; nx * ny + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        let mut fill = counts.clone();
        let mut sorted = vec![Vector2::ZERO; n];
        for p in points {
            let c = cell_of(p);
            sorted[fill[c] as usize] = *p;
            fill[c] += 1;
        }
        Self {
            points: sorted,
            cell_start: counts,
            origin: lo,
            h,
            nx,
            ny,
            weight,
            leaders: leaders.to_vec(),
            n_topo: n_topo as f64,
            total_mass: n as f64 * weight + leaders.len() as f64,
            cell_radius: vec![f64::NAN; nx * ny * BOUND_REFINE * BOUND_REFINE],
            scratch: Vec::new(),
            leader_scratch: Vec::new(),
        }
    }

    #[inline]
    fn cell_coords(&self, x: Vector2) -> (usize, usize) {
        let fx = ((x.x - self.origin.x) / self.h).floor();
        let fy = ((x.y - self.origin.y) / self.h).floor();
        let cx = if fx < 0.0 { 0 } else { (fx as usize).min(self.nx - 1) };
        let cy = if fy < 0.0 { 0 } else { (fy as usize).min(self.ny - 1) };
        (cx, cy)
    }

    /// Samples needed together with `l` leaders to reach the threshold mass.
    #[inline]
    fn samples_needed(&self, l: usize) -> usize {
        let rest = self.n_topo - l as f64;
        if rest <= 0.0 {
            0
        } else {
            (rest / self.weight - 1e-9).ceil().max(0.0) as usize
        }
    }

    /// Smallest squared radius reaching the threshold, given squared
    /// distances of (a subset of) the samples and sorted squared distances
    /// of all leaders. Partially reorders `samples`.
    fn radius_from(&self, samples: &mut [f64], leaders: &[f64]) -> Option<f64> {
        let n = samples.len();
        // samples[..bound] always holds the `bound` smallest values
        let mut bound = n;
        let mut best: Option<f64> = None;
        for l in 0..=leaders.len() {
            let k = self.samples_needed(l);
            if k > n {
                continue;
            }
            let ds = if k == 0 {
                0.0
            } else {
                // squared distances are non-negative, so bit patterns order like values
                let kth = *samples[..bound].select_nth_unstable_by_key(k - 1, |a| a.to_bits()).1;
                bound = k;
                kth
            };
            let dl = if l == 0 { 0.0 } else { leaders[l - 1] };
            let r = dl.max(ds);
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
        best
    }

    /// Exact minimal ball around `x`.
    pub(crate) fn exact(&mut self, x: Vector2) -> BallContext {
        if self.total_mass <= 0.0 {
            return NO_BALL;
        }
        let mut leaders = std::mem::take(&mut self.leader_scratch);
        leaders.clear();
        leaders.extend(self.leaders.iter().map(|y| x.distance_sq(*y)));
        leaders.sort_by(|a, b| a.total_cmp(b));
        let mut dist = std::mem::take(&mut self.scratch);
        dist.clear();

        let degenerate = self.total_mass < self.n_topo - 1e-9;
        let (cx, cy) = self.cell_coords(x);
        let max_ring = self.nx.max(self.ny);
        let mut radius_sq = f64::INFINITY;
        for ring in 0..=max_ring {
            self.collect_ring(x, cx, cy, ring, &mut dist);
            let covered = self.covered_radius(x, cx, cy, ring);
            if degenerate {
                if covered.is_infinite() {
                    break;
                }
                continue;
            }
            if covered.is_finite() {
                // the ball fits in the searched block iff the mass already
                // inside the covered disc reaches the threshold
                let c_sq = covered * covered;
                let m = dist.iter().filter(|&&d| d <= c_sq).count() as f64 * self.weight
                    + leaders.iter().filter(|&&d| d <= c_sq).count() as f64;
                if m < self.n_topo - 1e-9 {
                    continue;
                }
                dist.retain(|&d| d <= c_sq);
            }
            if let Some(r) = self.radius_from(&mut dist, &leaders) {
                radius_sq = r;
            }
            break;
        }
        if degenerate {
            log::debug!("meso topological ball degenerate: mass {} < {}", self.total_mass, self.n_topo);
            radius_sq = dist.iter().chain(leaders.iter()).copied().fold(0.0, f64::max);
        }
        let n_samples = dist.iter().filter(|&&d| d <= radius_sq).count();
        let n_leaders = leaders.iter().filter(|&&d| d <= radius_sq).count();
        self.scratch = dist;
        self.leader_scratch = leaders;
        BallContext { radius_sq, n_star: n_samples as f64 * self.weight + n_leaders as f64 }
    }

    fn collect_ring(&self, x: Vector2, cx: usize, cy: usize, ring: usize, out: &mut Vec<f64>) {
        let (cx, cy, r) = (cx as isize, cy as isize, ring as isize);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut visit = |i: isize, j: isize| {
            if i < 0 || j < 0 || i >= nx || j >= ny {
                return;
            }
            let c = (j * nx + i) as usize;
            let (a, b) = (self.cell_start[c] as usize, self.cell_start[c + 1] as usize);
            out.extend(self.points[a..b].iter().map(|p| x.distance_sq(*p)));
        };
        if r == 0 {
            visit(cx, cy);
            return;
        }
        for i in (cx - r)..=(cx + r) {
            visit(i, cy - r);
            visit(i, cy + r);
        }
        for j in (cy - r + 1)..=(cy + r - 1) {
            visit(cx - r, j);
            visit(cx + r, j);
        }
    }

    /// Radius of the disc around `x` whose points are all inside the
    /// visited block of cells; infinite once the block covers the grid.
    fn covered_radius(&self, x: Vector2, cx: usize, cy: usize, ring: usize) -> f64 {
        let mut cover = f64::INFINITY;
        if cx > ring {
            cover = cover.min(x.x - (self.origin.x + (cx - ring) as f64 * self.h));
        }
        if cx + ring + 1 < self.nx {
            cover = cover.min(self.origin.x + (cx + ring + 1) as f64 * self.h - x.x);
        }
        if cy > ring {
            cover = cover.min(x.y - (self.origin.y + (cy - ring) as f64 * self.h));
        }
        if cy + ring + 1 < self.ny {
            cover = cover.min(self.origin.y + (cy + ring + 1) as f64 * self.h - x.y);
        }
        cover.max(0.0)
    }

    /// Upper bound of the ball radius anywhere in the cell holding `x`
    /// (the radius is 1-Lipschitz in the centre).
    pub(crate) fn radius_upper_bound(&mut self, x: Vector2) -> f64 {
        let hb = self.h / BOUND_REFINE as f64;
        let (nbx, nby) = (self.nx * BOUND_REFINE, self.ny * BOUND_REFINE);
        let fx = ((x.x - self.origin.x) / hb).floor();
        let fy = ((x.y - self.origin.y) / hb).floor();
        let cx = if fx < 0.0 { 0 } else { (fx as usize).min(nbx - 1) };
        let cy = if fy < 0.0 { 0 } else { (fy as usize).min(nby - 1) };
        let c = cy * nbx + cx;
        let centre = Vector2::new(self.origin.x + (cx as f64 + 0.5) * hb, self.origin.y + (cy as f64 + 0.5) * hb);
        if self.cell_radius[c].is_nan() {
            self.cell_radius[c] = self.exact(centre).radius_sq.max(0.0).sqrt();
        }
        self.cell_radius[c] + x.distance(centre)
    }
}

/// Per-step lazily evaluated balls of every sample.
struct BallCache {
    index: BallIndex,
    balls: Vec<Option<BallContext>>,
    upper: Vec<f64>,
    enabled: bool,
}

impl BallCache {
    fn new(index: BallIndex, n: usize, enabled: bool) -> Self {
        Self { index, balls: vec![None; n], upper: vec![f64::NAN; n], enabled }
    }

    /// Ball of sample `i` as seen by a partner at squared distance `d_sq`;
    /// skips the exact computation when the partner is provably outside.
    #[inline]
    fn for_partner(&mut self, i: usize, x: Vector2, theta: f64, d_sq: f64) -> BallContext {
        if !self.enabled || theta != 1.0 {
            return NO_BALL;
        }
        if let Some(b) = self.balls[i] {
            return b;
        }
        if self.upper[i].is_nan() {
            self.upper[i] = self.index.radius_upper_bound(x);
        }
        if d_sq > self.upper[i] * self.upper[i] {
            return NO_BALL;
        }
        let b = self.index.exact(x);
        self.balls[i] = Some(b);
        b
    }

    fn full(&mut self, i: usize, x: Vector2, theta: f64) -> BallContext {
        if !self.enabled || theta != 1.0 {
            return NO_BALL;
        }
        if let Some(b) = self.balls[i] {
            return b;
        }
        let b = self.index.exact(x);
        self.balls[i] = Some(b);
        b
    }
}

/// One kinetic step: collisions, leader Euler step, transport, walls, exit.
#[allow(clippy::too_many_arguments)]
pub fn kinetic_step(
    ens: &ParticleEnsemble,
    swarm: &LeaderSwarm,
    controls: &[Vector2],
    params: &ModelParams,
    cfg: &KineticConfig,
    scenario: &Scenario,
    rng: &mut Stream,
) -> Result<(ParticleEnsemble, LeaderSwarm)> {
    if controls.len() != swarm.leaders.len() {
        return Err(Error::ControlDimension { expected: swarm.leaders.len(), got: controls.len() });
    }
    if let Some(k) = controls.iter().position(|u| !u.is_finite()) {
        return Err(Error::invalid(format!("controls[{k}]"), "must be finite"));
    }
    let dt = cfg.dt;
    let active: Vec<usize> = (0..ens.samples.len()).filter(|&i| ens.samples[i].active).collect();
    let pw = ens.particle_weight;
    let mass_f = active.len() as f64 * pw;

    // leader velocities from step-start data
    let mut next_swarm = swarm.clone();
    let active_leaders: Vec<usize> = (0..swarm.leaders.len()).filter(|&k| !swarm.leaders[k].evacuated).collect();
    for &k in &active_leaders {
        let y = swarm.leaders[k].position;
        let mut w = controls[k];
        if params.c_rep_leader != 0.0 {
            let mut from_f = Vector2::ZERO;
            for &i in &active {
                from_f += leader_repulsion(y, ens.samples[i].position, params);
            }
            w += from_f * pw;
            for &l in &active_leaders {
                w += leader_repulsion(y, swarm.leaders[l].position, params);
            }
        }
        next_swarm.leaders[k].velocity = w;
    }
    let current_leaders: Vec<LeaderState> = active_leaders.iter().map(|&k| next_swarm.leaders[k]).collect();
    let leader_positions: Vec<Vector2> = current_leaders.iter().map(|l| l.position).collect();
    let mass_l = current_leaders.len() as f64;
    let need_ball = params.c_align != 0.0;

    let mut dv = vec![Vector2::ZERO; ens.samples.len()];
    match cfg.mode {
        KineticMode::MonteCarlo => {
            let mut order = active.clone();
            order.shuffle(rng);
            let n_sub = order.len().min(cfg.ball_subsample);
            let sub: Vec<Vector2> = order[..n_sub].iter().map(|&i| ens.samples[i].position).collect();
            let sub_weight = if n_sub > 0 { mass_f / n_sub as f64 } else { 0.0 };
            let index = BallIndex::new(&sub, sub_weight, &leader_positions, params.n_topo);
            let mut cache = BallCache::new(index, ens.samples.len(), need_ball);

            let scaling = KineticScaling::new(cfg.epsilon, mass_f, mass_l, params.noise_var);
            let prob_f = scaling.follower_probability(dt, mass_f);
            let std = scaling.varsigma_sq.sqrt();
            let c_rand = cfg.noise_coefficient(params);
            for pair in order.chunks_exact(2) {
                let u: f64 = rng.random();
                if u >= prob_f {
                    continue;
                }
                let (i, j) = (pair[0], pair[1]);
                let (p, q) = (&ens.samples[i], &ens.samples[j]);
                let (xi_p, xi_q) = if std > 0.0 && c_rand != 0.0 {
                    (truncated_normal_vector(rng, std, cfg.noise_cut), truncated_normal_vector(rng, std, cfg.noise_cut))
                } else {
                    (Vector2::ZERO, Vector2::ZERO)
                };
                let d_sq = p.position.distance_sq(q.position);
                let theta_p = visibility_indicator(p.position, scenario);
                let theta_q = visibility_indicator(q.position, scenario);
                let ball_p = cache.for_partner(i, p.position, theta_p, d_sq);
                let ball_q = cache.for_partner(j, q.position, theta_q, d_sq);
                dv[i] += follower_increment(p, q, xi_p, c_rand, scaling.eta_f, mass_f, &ball_p, params, scenario);
                dv[j] += follower_increment(q, p, xi_q, c_rand, scaling.eta_f, mass_f, &ball_q, params, scenario);
            }
            if !current_leaders.is_empty() {
                let prob_l = scaling.leader_probability(dt, mass_l);
                for &i in &active {
                    let u: f64 = rng.random();
                    if u >= prob_l {
                        continue;
                    }
                    let leader = &current_leaders[rng.random_range(0..current_leaders.len())];
                    let p = &ens.samples[i];
                    let theta = visibility_indicator(p.position, scenario);
                    let ball = cache.for_partner(i, p.position, theta, p.position.distance_sq(leader.position));
                    dv[i] += leader_increment(p, leader, scaling.eta_l, mass_l, &ball, params, scenario);
                }
            }
        }
        KineticMode::MeanField => {
            let all: Vec<Vector2> = active.iter().map(|&i| ens.samples[i].position).collect();
            let index = BallIndex::new(&all, pw, &leader_positions, params.n_topo);
            let mut cache = BallCache::new(index, ens.samples.len(), need_ball);
            for &i in &active {
                let p = &ens.samples[i];
                let theta = visibility_indicator(p.position, scenario);
                let ball = cache.full(i, p.position, theta);
                let mut acc = propulsion(theta, p.position, p.velocity, Vector2::ZERO, params, scenario.target);
                let mut h = Vector2::ZERO;
                for &j in &active {
                    if j != i {
                        let q = &ens.samples[j];
                        h += pair_force(p.position, p.velocity, q.position, q.velocity, theta, &ball, params);
                    }
                }
                acc += h * pw;
                for l in &current_leaders {
                    acc += pair_force(p.position, p.velocity, l.position, l.velocity, theta, &ball, params);
                }
                dv[i] = acc * dt;
            }
        }
    }

    let mut next = ens.clone();
    for &i in &active {
        let s = &ens.samples[i];
        let n = &mut next.samples[i];
        n.velocity = (s.velocity + dv[i]).clamp_norm(params.v_max);
        n.position = s.position + s.velocity * dt;
        if !scenario.walls.is_empty() {
            let (p, v) = wall_resolution(s.position, n.position, n.velocity, &scenario.walls);
            n.position = p;
            n.velocity = v;
        }
        if scenario.exit.exits(s.position, n.position) {
            n.active = false;
        }
    }
    for &k in &active_leaders {
        let old = swarm.leaders[k].position;
        let l = &mut next_swarm.leaders[k];
        l.position = old + l.velocity * dt;
        if !scenario.walls.is_empty() {
            let (p, v) = wall_resolution(old, l.position, l.velocity, &scenario.walls);
            l.position = p;
            l.velocity = v;
        }
        if scenario.exit.exits(old, l.position) {
            l.evacuated = true;
        }
    }
    next.time = ens.time + dt;
    next.step = ens.step + 1;
    Ok((next, next_swarm))
}

/// Mass per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub bounds: Rect,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, row `j` spans `y` in `[min.y + j dy, min.y + (j+1) dy)`.
    pub values: Vec<f64>,
    /// Active mass outside `bounds`.
    pub outside: f64,
    pub time: f64,
    pub mass: f64,
}

/// Bins the active sample mass on a regular grid.
pub fn density_histogram(ens: &ParticleEnsemble, bounds: Rect, nx: usize, ny: usize) -> Result<DensityGrid> {
    if nx == 0 || ny == 0 || !bounds.is_valid() {
        return Err(Error::invalid("density.grid", "needs a valid box and positive resolution"));
    }
    let mut values = vec![0.0; nx * ny];
    let mut outside = 0.0;
    let (dx, dy) = (bounds.width() / nx as f64, bounds.height() / ny as f64);
    for s in ens.samples.iter().filter(|s| s.active) {
        let p = s.position;
        if p.x < bounds.min.x || p.y < bounds.min.y || p.x > bounds.max.x || p.y > bounds.max.y {
            outside += ens.particle_weight;
            continue;
        }
        let i = (((p.x - bounds.min.x) / dx) as usize).min(nx - 1);
        let j = (((p.y - bounds.min.y) / dy) as usize).min(ny - 1);
        values[j * nx + i] += ens.particle_weight;
    }
    Ok(DensityGrid { bounds, nx, ny, values, outside, time: ens.time, mass: ens.mass() })
}

/// Plain-text grid dump: a commented header, then one row per line.
pub fn write_density_grid<W: Write>(out: &mut W, grid: &DensityGrid) -> io::Result<()> {
    writeln!(
        out,
        "# bounds {} {} {} {}",
        fmt9(grid.bounds.min.x),
        fmt9(grid.bounds.min.y),
        fmt9(grid.bounds.max.x),
        fmt9(grid.bounds.max.y)
    )?;
    writeln!(out, "# resolution {} {}", grid.nx, grid.ny)?;
    writeln!(out, "# time {}", fmt9(grid.time))?;
    writeln!(out, "# mass {}", fmt9(grid.mass))?;
    writeln!(out, "# outside {}", fmt9(grid.outside))?;
    for row in grid.values.chunks(grid.nx) {
        let line: Vec<String> = row.iter().map(|v| fmt9(*v)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Ensemble checkpoint CSV: `x,y,vx,vy,active`.
pub fn write_ensemble_csv<W: Write>(out: &mut W, ens: &ParticleEnsemble) -> io::Result<()> {
    writeln!(out, "x,y,vx,vy,active")?;
    for s in &ens.samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt9(s.position.x),
            fmt9(s.position.y),
            fmt9(s.velocity.x),
            fmt9(s.velocity.y),
            u8::from(s.active)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::topological_ball;
    use crate::scenario::ExitRule;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64) -> Vector2 {
        Vector2::new(x, y)
    }

    fn sample(x: Vector2, vel: Vector2) -> Sample {
        Sample { position: x, velocity: vel, active: true }
    }

    #[test]
    fn scaling_relations() {
        let s = KineticScaling::new(0.02, 150.0, 3.0, 4.0);
        assert_relative_eq!(s.follower_probability(0.01, 150.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(s.leader_probability(0.01, 3.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(s.varsigma_sq, 200.0, max_relative = 1e-14);
    }

    #[test]
    fn config_rejects_probability_above_one() {
        let cfg = KineticConfig { dt: 0.05, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(KineticConfig::default().validate().is_ok());
    }

    #[test]
    fn follower_rule_examples() {
        let p = ModelParams::setting1();
        let s = Scenario::setting1();
        let a = sample(v(29.0, 10.0), v(1.0, 0.0));
        let far = sample(v(0.0, 0.0), v(0.0, 0.0));
        let (va, _) =
            binary_follower_interaction(&a, &far, Vector2::ZERO, Vector2::ZERO, 0.2, 0.02, 150.0, &NO_BALL, &NO_BALL, &p, &s);
        assert_relative_eq!(va.x, 1.0 - 0.01, max_relative = 1e-14);
        assert_eq!(va.y, 0.0);
        let (vz, _) =
            binary_follower_interaction(&a, &far, v(3.0, 3.0), Vector2::ZERO, 0.2, 0.0, 150.0, &NO_BALL, &NO_BALL, &p, &s);
        assert_eq!(vz, a.velocity);
    }

    #[test]
    fn leader_rule_example() {
        let p = ModelParams::setting1();
        let s = Scenario::setting1();
        let f = sample(v(0.0, 0.0), Vector2::ZERO);
        let leader = LeaderState { position: v(1.0, 0.0), velocity: v(1.0, 0.0), evacuated: false };
        let ball = BallContext { radius_sq: 4.0, n_star: 10.0 };
        let out = binary_leader_interaction(&f, &leader, 0.02, 3.0, &ball, &p, &s);
        assert_relative_eq!(out.x, 0.018, max_relative = 1e-12);
        let outside = BallContext { radius_sq: 0.25, n_star: 10.0 };
        assert_eq!(binary_leader_interaction(&f, &leader, 0.02, 3.0, &outside, &p, &s), Vector2::ZERO);
        assert_eq!(binary_leader_interaction(&f, &leader, 0.0, 3.0, &ball, &p, &s), Vector2::ZERO);
    }

    #[test]
    fn unit_weight_index_matches_topological_ball() {
        let mut rng = RandomSource::new(3).stream(&[0]);
        let pts: Vec<Vector2> =
            (0..300).map(|_| v(rng.random_range(0.0..10.0), rng.random_range(0.0..5.0))).collect();
        let leaders = vec![v(5.0, 2.5), v(1.0, 1.0)];
        let mut idx = BallIndex::new(&pts, 1.0, &leaders, 10);
        let mut all = pts.clone();
        all.extend(leaders.iter().copied());
        for q in [v(5.0, 2.5), v(-3.0, 7.0), v(9.9, 0.1), pts[17]] {
            let b = topological_ball(q, &all, 10);
            let c = idx.exact(q);
            assert_relative_eq!(c.radius_sq, b.radius * b.radius, max_relative = 1e-12);
            assert_eq!(c.n_star, b.n_star as f64);
            assert!(idx.radius_upper_bound(q) >= b.radius - 1e-12);
        }
    }

    #[test]
    fn weighted_ball_reaches_mass() {
        let pts: Vec<Vector2> = (0..100).map(|i| v(i as f64, 0.0)).collect();
        let mut idx = BallIndex::new(&pts, 0.25, &[], 10);
        // 40 samples of weight 1/4 needed; from x=0 that is the point 39
        let c = idx.exact(v(0.0, 0.0));
        assert_eq!(c.radius_sq, 39.0 * 39.0);
        assert_eq!(c.n_star, 10.0);
        let mut with_leader = BallIndex::new(&pts, 0.25, &[v(0.5, 0.0)], 10);
        let c = with_leader.exact(v(0.0, 0.0));
        assert_eq!(c.radius_sq, 35.0 * 35.0);
        assert_eq!(c.n_star, 10.0);
    }

    #[test]
    fn degenerate_weighted_ball_takes_everything() {
        let pts = vec![v(0.0, 0.0), v(2.0, 0.0)];
        let mut idx = BallIndex::new(&pts, 1.0, &[], 10);
        let c = idx.exact(v(0.0, 0.0));
        assert_eq!(c.radius_sq, 4.0);
        assert_eq!(c.n_star, 2.0);
    }

    #[test]
    fn leader_quadrature_on_a_dirac() {
        let mut p = ModelParams::setting1();
        p.noise_var = 0.0;
        let mut s = Scenario::setting1();
        s.exit = ExitRule::Disabled;
        let samples = vec![sample(v(1.2, 1.0), Vector2::ZERO); 50];
        let ens = ParticleEnsemble::new(samples, 7.0).unwrap();
        let swarm = LeaderSwarm::new(vec![LeaderState::new(v(1.0, 1.0))]);
        let cfg = KineticConfig { samples: 50, ..Default::default() };
        let mut rng = RandomSource::new(0).stream(&[0]);
        let (_, sw) = kinetic_step(&ens, &swarm, &[Vector2::ZERO], &p, &cfg, &s, &mut rng).unwrap();
        let expect = leader_repulsion(v(1.0, 1.0), v(1.2, 1.0), &p) * 7.0;
        assert_relative_eq!(sw.leaders[0].velocity.x, expect.x, max_relative = 1e-12);
    }

    #[test]
    fn histogram_totals() {
        let samples = vec![sample(v(0.5, 0.5), Vector2::ZERO), sample(v(1.5, 0.5), Vector2::ZERO), sample(v(9.0, 9.0), Vector2::ZERO)];
        let ens = ParticleEnsemble::new(samples, 3.0).unwrap();
        let g = density_histogram(&ens, Rect::new(v(0.0, 0.0), v(2.0, 1.0)), 2, 1).unwrap();
        assert_eq!(g.values, vec![1.0, 1.0]);
        assert_eq!(g.outside, 1.0);
        let mut buf = Vec::new();
        write_density_grid(&mut buf, &g).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("# outside 1\n1 1\n"));
    }
}
