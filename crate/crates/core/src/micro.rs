//! Microscopic leader-follower dynamics.
//!
//! Followers are second order (position and velocity integrated), leaders are
//! first order: their velocity is the control plus a short-range repulsion.
//! Time stepping is explicit Euler; positions advance with the step-start
//! velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{segment_intersection, Vector2};
use crate::kernels::{decay, repulsion_kernel, visibility_indicator, BallContext};
use crate::params::ModelParams;
use crate::rng::{normal_vector, tag, RandomSource, Stream};
use crate::scenario::{Exclusion, Scenario, Wall};

/// Distance kept between a blocked agent and the wall face.
pub const CONTACT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    pub position: Vector2,
    pub velocity: Vector2,
    pub evacuated: bool,
}

impl FollowerState {
    pub fn new(position: Vector2, velocity: Vector2) -> Self {
        Self { position, velocity, evacuated: false }
    }
}

/// Leader velocity is an output of the dynamics, stored for alignment and
/// reporting. Leaders that reach the exit leave the domain like followers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderState {
    pub position: Vector2,
    pub velocity: Vector2,
    pub evacuated: bool,
}

impl LeaderState {
    pub fn new(position: Vector2) -> Self {
        Self { position, velocity: Vector2::ZERO, evacuated: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdState {
    pub followers: Vec<FollowerState>,
    pub leaders: Vec<LeaderState>,
    pub time: f64,
    pub step: u64,
}

impl CrowdState {
    pub fn new(followers: Vec<FollowerState>, leaders: Vec<LeaderState>) -> Self {
        Self { followers, leaders, time: 0.0, step: 0 }
    }

    /// Initial state of a scenario, drawn from the spawn stream of `source`.
    pub fn spawn(scenario: &Scenario, source: &RandomSource) -> Result<Self> {
        let mut rng = source.stream(&[tag::SPAWN]);
        let followers = scenario
            .spawn_followers(scenario.followers, &mut rng)
            .into_iter()
            .map(|(x, v)| FollowerState::new(x, v))
            .collect();
        let leaders = scenario
            .leader_layout
            .place(scenario.leaders, &mut rng)?
            .into_iter()
            .map(LeaderState::new)
            .collect();
        Ok(Self::new(followers, leaders))
    }

    pub fn active_followers(&self) -> impl Iterator<Item = &FollowerState> {
        self.followers.iter().filter(|f| !f.evacuated)
    }

    pub fn active_follower_count(&self) -> usize {
        self.followers.iter().filter(|f| !f.evacuated).count()
    }

    pub fn active_leaders(&self) -> impl Iterator<Item = &LeaderState> {
        self.leaders.iter().filter(|l| !l.evacuated)
    }

    pub fn all_evacuated(&self) -> bool {
        self.followers.iter().all(|f| f.evacuated)
    }
}

/// Target-direction unit vector, zero at the target itself.
#[inline]
fn target_direction(x: Vector2, target: Vector2) -> Vector2 {
    (target - x).normalized_or_zero()
}

/// Self-propulsion with a pre-evaluated visibility indicator.
#[inline]
pub(crate) fn propulsion(theta: f64, x: Vector2, v: Vector2, z: Vector2, params: &ModelParams, target: Vector2) -> Vector2 {
    let speed = v * (params.c_speed * (params.speed_sq - v.norm_sq()));
    let relax = if theta == 1.0 {
        (z - v) * params.c_noise
    } else {
        (target_direction(x, target) - v) * params.c_target
    };
    relax + speed
}

/// Relaxation toward the random velocity `z` outside the visibility region,
/// toward the unit target direction inside it, plus the speed regulation.
pub fn self_propulsion(x: Vector2, v: Vector2, z: Vector2, params: &ModelParams, scenario: &Scenario) -> Vector2 {
    propulsion(visibility_indicator(x, scenario), x, v, z, params, scenario.target)
}

/// Repulsion plus (outside the visibility region) topological alignment
/// exerted on the agent at `(x, v)` by the agent at `(xo, vo)`.
#[inline]
pub(crate) fn pair_force(
    x: Vector2,
    v: Vector2,
    xo: Vector2,
    vo: Vector2,
    theta: f64,
    ball: &BallContext,
    params: &ModelParams,
) -> Vector2 {
    let d = xo - x;
    let dist_sq = d.norm_sq();
    let r = params.repulsion_radius;
    let mut h = Vector2::ZERO;
    if dist_sq > 0.0 && dist_sq <= r * r {
        let dist = dist_sq.sqrt();
        h = d * (-params.c_rep_follower * decay(dist, params.gamma) / dist);
    }
    if theta == 1.0 && dist_sq <= ball.radius_sq {
        h += (vo - v) * (params.c_align / ball.n_star);
    }
    h
}

/// Force on a follower from another agent; identical for follower and
/// leader partners, so leaders are indistinguishable to the crowd.
pub fn follower_interaction(
    me: &FollowerState,
    other_pos: Vector2,
    other_vel: Vector2,
    ball: &BallContext,
    params: &ModelParams,
    scenario: &Scenario,
) -> Vector2 {
    let theta = visibility_indicator(me.position, scenario);
    pair_force(me.position, me.velocity, other_pos, other_vel, theta, ball, params)
}

/// Leader-side repulsion `-C_r^L R_{zeta,r}` from one agent.
#[inline]
pub(crate) fn leader_repulsion(y: Vector2, other: Vector2, params: &ModelParams) -> Vector2 {
    repulsion_kernel(y, other, params.zeta, params.repulsion_radius) * (-params.c_rep_leader)
}

/// Velocity of leader `k`: repulsion from active followers and the other
/// leaders, plus its control.
pub fn leader_velocity(k: usize, state: &CrowdState, u_k: Vector2, params: &ModelParams) -> Vector2 {
    let y = state.leaders[k].position;
    let mut w = Vector2::ZERO;
    if params.c_rep_leader != 0.0 {
        for f in state.active_followers() {
            w += leader_repulsion(y, f.position, params);
        }
        for l in state.active_leaders() {
            w += leader_repulsion(y, l.position, params);
        }
    }
    w + u_k
}

/// Pushes a move that would pass through a wall back onto the wall face and
/// removes the velocity component normal to the wall.
pub fn wall_resolution(old: Vector2, proposed: Vector2, velocity: Vector2, walls: &[Wall]) -> (Vector2, Vector2) {
    let mut pos = proposed;
    let mut vel = velocity;
    if walls.is_empty() || old == proposed {
        return (pos, vel);
    }
    for _pass in 0..2 {
        let mut touched = false;
        for wall in walls {
            if let Some((p, v)) = resolve_one(old, pos, vel, wall) {
                pos = p;
                vel = v;
                touched = true;
            }
        }
        if !touched {
            break;
        }
    }
    (pos, vel)
}

fn resolve_one(old: Vector2, proposed: Vector2, velocity: Vector2, wall: &Wall) -> Option<(Vector2, Vector2)> {
    let along = wall.b - wall.a;
    let len = along.norm();
    let e = along / len;
    let mut n = e.perp();
    let side = (old - wall.a).dot(n);
    if side < 0.0 || (side == 0.0 && (proposed - old).dot(n) > 0.0) {
        n = -n;
    }
    let half = 0.5 * wall.thickness;
    let face_a = wall.a + n * half - e * half;
    let face_b = wall.b + n * half + e * half;
    segment_intersection(old, proposed, face_a, face_b)?;
    let depth = (proposed - face_a).dot(n) - CONTACT_TOLERANCE;
    let pos = proposed - n * depth;
    let vel = velocity - n * velocity.dot(n);
    Some((pos, vel))
}

/// Followers whose move would bring them closer than `diameter` to another
/// pedestrian stay where they were; velocities are kept. Leaders, at their
/// new positions, block followers but are never frozen. See [`Exclusion`]
/// for how conflicts between moving followers are resolved. Under the
/// sequential rule no pair ends closer than `diameter` unless it started
/// closer.
pub fn hard_sphere_filter(old: &CrowdState, proposed: &CrowdState, diameter: f64, rule: Exclusion) -> CrowdState {
    let mut out = proposed.clone();
    if diameter <= 0.0 {
        return out;
    }
    let d_sq = diameter * diameter;
    let active: Vec<usize> = (0..old.followers.len()).filter(|&i| !old.followers[i].evacuated).collect();
    let leaders: Vec<Vector2> = proposed.leaders.iter().filter(|l| !l.evacuated).map(|l| l.position).collect();
    let mut committed: Vec<Vector2> = active.iter().map(|&i| old.followers[i].position).collect();
    for (a, &i) in active.iter().enumerate() {
        let p = proposed.followers[i].position;
        if p == old.followers[i].position {
            continue;
        }
        let near_follower = match rule {
            Exclusion::Sequential => committed.iter().enumerate().any(|(b, q)| b != a && p.distance_sq(*q) < d_sq),
            Exclusion::Simultaneous => active.iter().any(|&j| {
                j != i
                    && (p.distance_sq(proposed.followers[j].position) < d_sq
                        || p.distance_sq(old.followers[j].position) < d_sq)
            }),
        };
        if near_follower || leaders.iter().any(|q| p.distance_sq(*q) < d_sq) {
            out.followers[i].position = old.followers[i].position;
        } else {
            committed[a] = p;
        }
    }
    out
}

/// Source of the exploration draws `z`.
pub enum Noise<'a> {
    Draw(&'a mut Stream),
    /// Noise-free prediction model (z = 0).
    Zero,
}

/// One explicit Euler step of the coupled system.
pub fn micro_step(
    state: &CrowdState,
    controls: &[Vector2],
    params: &ModelParams,
    scenario: &Scenario,
    rng: &mut Stream,
) -> Result<CrowdState> {
    step_with(state, controls, params, scenario, Noise::Draw(rng))
}

/// Like [`micro_step`] with a configurable noise source.
pub fn step_with(
    state: &CrowdState,
    controls: &[Vector2],
    params: &ModelParams,
    scenario: &Scenario,
    mut noise: Noise<'_>,
) -> Result<CrowdState> {
    if controls.len() != state.leaders.len() {
        return Err(Error::ControlDimension { expected: state.leaders.len(), got: controls.len() });
    }
    if let Some(k) = controls.iter().position(|u| !u.is_finite()) {
        return Err(Error::invalid(format!("controls[{k}]"), "must be finite"));
    }
    let dt = params.dt;
    let followers: Vec<usize> = (0..state.followers.len()).filter(|&i| !state.followers[i].evacuated).collect();
    let leaders: Vec<usize> = (0..state.leaders.len()).filter(|&k| !state.leaders[k].evacuated).collect();
    let nf = followers.len();
    let n_all = nf + leaders.len();

    let mut positions = Vec::with_capacity(n_all);
    let mut velocities = Vec::with_capacity(n_all);
    for &i in &followers {
        positions.push(state.followers[i].position);
        velocities.push(state.followers[i].velocity);
    }
    // leader velocities from step-start positions and the current control
    for &k in &leaders {
        positions.push(state.leaders[k].position);
        velocities.push(leader_velocity(k, state, controls[k], params));
    }

    let std_dev = params.noise_var.sqrt();
    let mut next = state.clone();
    let mut dist_sq = vec![0.0; n_all];
    let mut scratch = Vec::with_capacity(params.n_topo + 1);
    let r_sq = params.repulsion_radius * params.repulsion_radius;
    let need_ball = params.c_align != 0.0;

    for (a, &i) in followers.iter().enumerate() {
        let x = positions[a];
        let v = velocities[a];
        let z = match &mut noise {
            Noise::Draw(rng) if std_dev > 0.0 => normal_vector(*rng, std_dev),
            _ => Vector2::ZERO,
        };
        let theta = visibility_indicator(x, scenario);
        let mut acc = propulsion(theta, x, v, z, params, scenario.target);

        for (b, p) in positions.iter().enumerate() {
            dist_sq[b] = x.distance_sq(*p);
        }
        let ball = if theta == 1.0 && need_ball {
            ball_from_distances(&dist_sq, &mut scratch, params.n_topo)
        } else {
            BallContext { radius_sq: -1.0, n_star: 1.0 }
        };
        for b in 0..n_all {
            if b == a {
                continue;
            }
            let d2 = dist_sq[b];
            if d2 > r_sq && d2 > ball.radius_sq {
                continue;
            }
            acc += pair_force(x, v, positions[b], velocities[b], theta, &ball, params);
        }
        let f = &mut next.followers[i];
        f.velocity = (v + acc * dt).clamp_norm(params.v_max);
        f.position = x + v * dt;
    }
    for (a, &k) in leaders.iter().enumerate() {
        let w = velocities[nf + a];
        let l = &mut next.leaders[k];
        l.velocity = w;
        l.position = positions[nf + a] + w * dt;
    }

    if !scenario.walls.is_empty() {
        for &i in &followers {
            let (p, v) = wall_resolution(
                state.followers[i].position,
                next.followers[i].position,
                next.followers[i].velocity,
                &scenario.walls,
            );
            next.followers[i].position = p;
            next.followers[i].velocity = v;
        }
        for &k in &leaders {
            let (p, v) =
                wall_resolution(state.leaders[k].position, next.leaders[k].position, next.leaders[k].velocity, &scenario.walls);
            next.leaders[k].position = p;
            next.leaders[k].velocity = v;
        }
    }

    if scenario.hard_sphere_diameter > 0.0 {
        next = hard_sphere_filter(state, &next, scenario.hard_sphere_diameter, scenario.exclusion);
    }

    for &i in &followers {
        if scenario.exit.exits(state.followers[i].position, next.followers[i].position) {
            next.followers[i].evacuated = true;
        }
    }
    for &k in &leaders {
        if scenario.exit.exits(state.leaders[k].position, next.leaders[k].position) {
            next.leaders[k].evacuated = true;
        }
    }
    next.time = state.time + dt;
    next.step = state.step + 1;
    Ok(next)
}

/// Closed topological ball from precomputed squared distances (the querying
/// agent's own zero distance included).
#[inline]
pub(crate) fn ball_from_distances(dist_sq: &[f64], scratch: &mut Vec<f64>, n_topo: usize) -> BallContext {
    let n = dist_sq.len();
    let radius_sq = if n_topo > n {
        log::debug!("topological ball degenerate: {n_topo} > {n}");
        dist_sq.iter().copied().fold(0.0, f64::max)
    } else {
        kth_smallest_bounded(dist_sq, n_topo, scratch)
    };
    let n_star = dist_sq.iter().filter(|&&d| d <= radius_sq).count();
    BallContext { radius_sq, n_star: n_star as f64 }
}

/// `k`-th smallest value (1-based) via a sorted buffer of the `k` smallest
/// seen so far; cheaper than a full selection when `k` is small.
fn kth_smallest_bounded(values: &[f64], k: usize, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    for &d in values {
        if buf.len() == k {
            if d >= buf[k - 1] {
                continue;
            }
            buf.pop();
        }
        let at = buf.partition_point(|&b| b <= d);
        buf.insert(at, d);
    }
    buf[k - 1]
}
