//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion at its stated tolerance and sample size. The process
//! exits successfully after reporting so that a failing statistical
//! criterion is visible without aborting the workspace test run; set
//! `EVAC_ACCEPTANCE_STRICT=1` to exit non-zero on any failure. A subset can be
//! selected with `EVAC_ACCEPTANCE_ONLY=1,4,9`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use evac_core::config::{ExperimentConfig, Mode, StrategySpec};
use evac_core::control::{
    instantaneous_control, mpc_gradient, mpc_step, CompassResult, ControlSequence, CostWeights, MpcConfig,
    PiecewiseConstant,
};
use evac_core::experiment::{execute, rerun, run_batch, run_replicate, Command, ReplicateResult};
use evac_core::geometry::Vector2;
use evac_core::kernels::{repulsion_kernel, BallContext};
use evac_core::meso::{kinetic_step, KineticConfig, KineticMode, LeaderSwarm, ParticleEnsemble, Sample};
use evac_core::metrics::{mean, median, proportion_z};
use evac_core::micro::{follower_interaction, leader_velocity, self_propulsion, step_with, CrowdState, FollowerState, LeaderState, Noise};
use evac_core::params::ModelParams;
use evac_core::rng::RandomSource;
use evac_core::scenario::Scenario;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = fn(&mut Shared) -> Outcome;

/// Results reused across criteria (optimizer runs feed the invariant checks).
#[derive(Default)]
struct Shared {
    compass_runs: Vec<CompassResult>,
}

fn v(x: f64, y: f64) -> Vector2 {
    Vector2::new(x, y)
}

fn rel_err(got: Vector2, want: Vector2) -> f64 {
    (got - want).norm() / want.norm().max(f64::MIN_POSITIVE)
}

fn steps_or_horizon(r: &ReplicateResult, horizon: u64) -> f64 {
    r.evacuation_step().unwrap_or(horizon) as f64
}

fn c1_kernels(_: &mut Shared) -> Outcome {
    // e^{-0.2} and 1 - 1/sqrt(2), to 20 digits
    const E_M02: f64 = 0.818_730_753_077_981_858_67;
    const ONE_MINUS_RSQRT2: f64 = 0.292_893_218_813_452_475_60;
    let s1 = Scenario::setting1();
    let p1 = ModelParams::setting1();
    let no_ball = BallContext { radius_sq: -1.0, n_star: 1.0 };
    let mut p_leader = p1.clone();
    p_leader.zeta = 1.0;
    let mut nowhere = s1.clone();
    nowhere.visibility = evac_core::scenario::Region::Nowhere;
    let lone_leader_state = CrowdState::new(
        vec![FollowerState::new(v(5.2, 5.0), Vector2::ZERO)],
        vec![LeaderState::new(v(5.0, 5.0))],
    );
    let checks: Vec<(&str, Vector2, Vector2)> = vec![
        ("repulsion at distance 0.2", repulsion_kernel(v(0.0, 0.0), v(0.2, 0.0), 1.0, 0.4), v(E_M02, 0.0)),
        (
            "self-propulsion at unit speed",
            self_propulsion(v(29.0, 10.0), v(1.0, 0.0), Vector2::ZERO, &p1, &s1),
            v(-0.5, 0.0),
        ),
        (
            "self-propulsion at characteristic speed",
            self_propulsion(v(29.0, 10.0), v(0.5f64.sqrt(), 0.0), Vector2::ZERO, &p1, &s1),
            v(ONE_MINUS_RSQRT2, 0.0),
        ),
        (
            "follower repulsion",
            follower_interaction(
                &FollowerState::new(v(29.0, 10.0), Vector2::ZERO),
                v(29.2, 10.0),
                Vector2::ZERO,
                &no_ball,
                &p1,
                &s1,
            ),
            v(-2.0 * E_M02, 0.0),
        ),
        (
            "follower alignment",
            follower_interaction(
                &FollowerState::new(v(0.0, 0.0), Vector2::ZERO),
                v(1.0, 0.0),
                v(1.0, 0.0),
                &BallContext { radius_sq: 1.0, n_star: 2.0 },
                &p1,
                &nowhere,
            ),
            v(1.5, 0.0),
        ),
        ("leader repulsion", leader_velocity(0, &lone_leader_state, Vector2::ZERO, &p_leader), v(-1.5 * E_M02, 0.0)),
        ("leader free motion", leader_velocity(0, &lone_leader_state, v(1.0, 0.0), &ModelParams::setting3()), v(1.0, 0.0)),
    ];
    let worst = checks.iter().map(|(n, g, w)| (rel_err(*g, *w), *n)).fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    Outcome {
        pass: worst.0 <= 1e-12,
        detail: format!("{} values, worst relative error {:.2e} ({})", checks.len(), worst.0, worst.1),
    }
}

fn c2_herding(_: &mut Shared) -> Outcome {
    let mut rates = Vec::new();
    for leaders in 0..=5 {
        let mut cfg = ExperimentConfig::preset("setting0").expect("preset");
        cfg.scenario.leaders = leaders;
        cfg.seed = 1;
        cfg.replicates = 100;
        let runs = run_batch(&cfg, None, false).expect("setting 0 batch");
        let hits = runs.iter().filter(|r| r.metrics.consensus == Some(true)).count();
        rates.push(hits as f64 / runs.len() as f64);
    }
    let monotone = rates.windows(2).all(|w| w[1] >= w[0] - 0.10);
    Outcome {
        pass: rates[5] >= 0.90 && rates[1] <= 0.10 && monotone,
        detail: format!(
            "consensus rate by leader count 0..5: {} (need 5 >= 0.90, 1 <= 0.10, monotone within 0.10)",
            rates.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn setting1(strategy: StrategySpec, replicates: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("setting1").expect("preset");
    cfg.strategy = strategy;
    cfg.seed = 1;
    cfg.replicates = replicates;
    cfg
}

fn c3_micro_ordering(shared: &mut Shared) -> Outcome {
    let horizon = 2000;
    let started = Instant::now();
    let compass = run_batch(&setting1(StrategySpec::Compass, 20), None, false).expect("compass batch");
    let compass_time = started.elapsed();
    let goto = run_batch(&setting1(StrategySpec::GoToTarget, 20), None, false).expect("go-to-target batch");
    let idle = run_batch(&setting1(StrategySpec::Idle, 20), None, false).expect("no-leader batch");
    let med = |rs: &[ReplicateResult]| median(&rs.iter().map(|r| steps_or_horizon(r, horizon)).collect::<Vec<_>>());
    let (mc, mg, mi) = (med(&compass), med(&goto), med(&idle));
    let idle_stuck = idle.iter().filter(|r| r.evacuation_step().is_none()).count();
    shared.compass_runs.extend(compass.iter().filter_map(|r| r.compass.clone()));
    let band = (459.0 * 0.65, 459.0 * 1.35);
    let pass = mc < mg && mg < mi && idle_stuck * 2 >= idle.len() && mc >= band.0 && mc <= band.1
        && compass_time < Duration::from_secs(30 * 60);
    Outcome {
        pass,
        detail: format!(
            "median steps compass {mc} < go-to-target {mg} < no leaders {mi}; no-leader runs at horizon {idle_stuck}/20; \
             compass band [{:.0}, {:.0}]; compass time {:.0} s",
            band.0,
            band.1,
            compass_time.as_secs_f64()
        ),
    }
}

/// Random open-space states: followers and leaders far from the exit.
fn random_state(rng: &mut impl Rng) -> CrowdState {
    let nf = rng.random_range(5..40);
    let nl = rng.random_range(1..4);
    let followers = (0..nf)
        .map(|_| {
            FollowerState::new(
                v(rng.random_range(5.0..20.0), rng.random_range(2.0..18.0)),
                v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            )
        })
        .collect();
    let leaders = (0..nl).map(|_| LeaderState::new(v(rng.random_range(5.0..20.0), rng.random_range(2.0..18.0)))).collect();
    CrowdState::new(followers, leaders)
}

fn c4_mpc(_: &mut Shared) -> Outcome {
    let started = Instant::now();
    let scenario = Scenario::setting1();
    let params = ModelParams::setting1();
    let mut rng = RandomSource::new(4).stream(&[0]);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let state = random_state(&mut rng);
        // alternate between box-saturated and interior minimizers
        let weights = if i % 2 == 0 { CostWeights::default() } else { CostWeights { mu_f: 1.0, mu_l: 1e-3, nu: 1.0 } };
        let cfg = MpcConfig { horizon: 2, ..MpcConfig::default() };
        let got = mpc_step(&state, &cfg, &weights, &params, &scenario, None).expect("mpc").controls;
        let want = instantaneous_control(&state, &weights, &params, &scenario, cfg.u_bound).expect("closed form");
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((*g - *w).norm());
        }
    }
    let run = |horizon: usize, inner: usize| {
        let mut cfg = setting1(StrategySpec::Mpc, 20);
        cfg.mpc = MpcConfig { horizon, inner_iterations: inner, ..MpcConfig::default() };
        let rs = run_batch(&cfg, None, false).expect("mpc batch");
        median(&rs.iter().map(|r| steps_or_horizon(r, 2000)).collect::<Vec<_>>())
    };
    let m2 = run(2, 50);
    let m6 = run(6, 2);
    let elapsed = started.elapsed();
    Outcome {
        pass: worst <= 1e-4 && m6 <= m2 && elapsed < Duration::from_secs(20 * 60),
        detail: format!(
            "two-stage vs closed form max deviation {worst:.2e} on 10 states; median steps horizon 6 {m6} <= horizon 2 {m2}; {:.0} s",
            elapsed.as_secs_f64()
        ),
    }
}

fn c5_mass(_: &mut Shared) -> Outcome {
    let scenario = Scenario::setting0();
    let params = ModelParams::setting0();
    let kinetic = KineticConfig { samples: 5000, ..KineticConfig::default() };
    let source = RandomSource::new(5);
    let (mut ens, mut swarm) = ParticleEnsemble::spawn(&scenario, kinetic.samples, &source).expect("spawn");
    let m0 = ens.mass();
    let active0 = ens.active_count();
    let controls = vec![v(1.0, 0.0); swarm.leaders.len()];
    let mut max_drift: f64 = 0.0;
    for step in 0..1000u64 {
        let mut rng = source.stream(&[99, step]);
        (ens, swarm) = kinetic_step(&ens, &swarm, &controls, &params, &kinetic, &scenario, &mut rng).expect("step");
        max_drift = max_drift.max((ens.mass() - m0).abs());
    }
    Outcome {
        pass: max_drift == 0.0 && ens.active_count() == active0,
        detail: format!("1000 steps, {} samples: max |m^F - m^F(0)| = {max_drift:e}", kinetic.samples),
    }
}

fn c6_diffusion(_: &mut Shared) -> Outcome {
    let mut scenario = Scenario::setting0();
    scenario.leaders = 0;
    let mut params = ModelParams::setting0();
    params.c_noise = 0.0;
    params.c_rep_follower = 0.0;
    params.c_align = 0.0;
    params.c_speed = 0.0;
    let kinetic = KineticConfig { samples: 10_000, noise_coefficient: Some(1.0), ..KineticConfig::default() };
    let mut rng = RandomSource::new(6).stream(&[0]);
    let samples = (0..kinetic.samples)
        .map(|_| Sample { position: v(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)), velocity: Vector2::ZERO, active: true })
        .collect();
    let mut ens = ParticleEnsemble::new(samples, 150.0).expect("ensemble");
    let mut swarm = LeaderSwarm::new(Vec::new());
    let steps = 200usize;
    let (mut ts, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..steps {
        (ens, swarm) = kinetic_step(&ens, &swarm, &[], &params, &kinetic, &scenario, &mut rng).expect("step");
        let n = ens.samples.len() as f64;
        let var = |f: fn(&Sample) -> f64| {
            let m = ens.samples.iter().map(f).sum::<f64>() / n;
            ens.samples.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / n
        };
        ts.push(ens.step as f64);
        vx.push(var(|s| s.velocity.x));
        vy.push(var(|s| s.velocity.y));
    }
    // least-squares slope through the origin
    let slope = |ys: &[f64]| ts.iter().zip(ys).map(|(t, y)| t * y).sum::<f64>() / ts.iter().map(|t| t * t).sum::<f64>();
    let want = params.noise_var * kinetic.dt;
    let (gx, gy) = (slope(&vx), slope(&vy));
    let err = ((gx - want).abs() / want).max((gy - want).abs() / want);
    Outcome {
        pass: err <= 0.10,
        detail: format!("variance growth per step x {gx:.5}, y {gy:.5}; expected {want:.5}; worst relative error {err:.3}"),
    }
}

fn c7_micro_meso(_: &mut Shared) -> Outcome {
    let scenario = Scenario::setting1();
    let params = ModelParams::setting1();
    let kinetic = KineticConfig { dt: params.dt, epsilon: params.dt, mode: KineticMode::MeanField, ..KineticConfig::default() };
    let mut worst: f64 = 0.0;
    let mut rng = RandomSource::new(7).stream(&[0]);
    for case in 0..20 {
        let nf = 1 + case % 5;
        // half the followers near the exit (inside the visibility disk)
        let followers = (0..nf)
            .map(|i| {
                let c = if i % 2 == 0 { v(27.0, 10.0) } else { v(22.0, 10.0) };
                FollowerState::new(
                    c + v(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)),
                    v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let leaders = vec![LeaderState::new(v(22.3, 10.2))];
        let state = CrowdState::new(followers, leaders);
        let controls = vec![v(0.5, -0.3)];
        let micro = step_with(&state, &controls, &params, &scenario, Noise::Zero).expect("micro step");
        let (ens, swarm) = kinetic_step(
            &ParticleEnsemble::from_crowd(&state),
            &LeaderSwarm::new(state.leaders.clone()),
            &controls,
            &params,
            &kinetic,
            &scenario,
            &mut rng,
        )
        .expect("kinetic step");
        let mut num = 0.0;
        let mut den = 0.0;
        for (f, s) in micro.followers.iter().zip(&ens.samples) {
            num += (f.position - s.position).norm_sq() + (f.velocity - s.velocity).norm_sq();
            den += f.position.norm_sq() + f.velocity.norm_sq();
        }
        for (a, b) in micro.leaders.iter().zip(&swarm.leaders) {
            num += (a.position - b.position).norm_sq() + (a.velocity - b.velocity).norm_sq();
            den += a.position.norm_sq() + a.velocity.norm_sq();
        }
        worst = worst.max((num / den).sqrt());
    }
    Outcome { pass: worst <= 1e-10, detail: format!("20 states of 1-5 followers, worst relative error {worst:.2e}") }
}

fn c8_meso_ordering(shared: &mut Shared) -> Outcome {
    let started = Instant::now();
    let mut base = ExperimentConfig::preset("setting1").expect("preset");
    base.mode = Mode::Meso;
    base.compass.iterations = 30;
    base.seed = 1;
    let mut opt = base.clone();
    opt.strategy = StrategySpec::Compass;
    let optimized = run_replicate(&opt, 1, None).expect("meso compass");
    let result = optimized.compass.clone().expect("compass result");
    let compass_time = started.elapsed();
    let evaluate = |strategy: StrategySpec| {
        let mut cfg = base.clone();
        cfg.strategy = strategy;
        cfg.replicates = 10;
        let rs = run_batch(&cfg, None, false).expect("meso batch");
        mean(&rs.iter().map(|r| r.metrics.evacuated_fraction).collect::<Vec<_>>())
    };
    let none = evaluate(StrategySpec::Idle);
    let goto = evaluate(StrategySpec::GoToTarget);
    let best = evaluate(StrategySpec::PiecewiseConstant(result.strategy.clone()));
    shared.compass_runs.push(result);
    let elapsed = started.elapsed();
    Outcome {
        pass: none < goto && goto < best && none <= 0.55 && best >= 0.75 && elapsed < Duration::from_secs(60 * 60),
        detail: format!(
            "mean evacuated fraction over 10 seeds: no leaders {none:.3} < go-to-target {goto:.3} < compass {best:.3}; \
             need no leaders <= 0.55 and compass >= 0.75; compass {:.0} s, total {:.0} s",
            compass_time.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    }
}

fn c9_smart_obstacles(_: &mut Shared) -> Outcome {
    let started = Instant::now();
    let mut failures = Vec::new();
    let n = 200;
    for leaders in 0..=6 {
        let mut cfg = ExperimentConfig::preset("setting3").expect("preset");
        cfg.scenario.leaders = leaders;
        cfg.seed = 1;
        cfg.replicates = n;
        let rs = run_batch(&cfg, None, false).expect("setting 3 batch");
        failures.push(rs.iter().filter(|r| !r.success).count());
    }
    let min = *failures.iter().min().expect("seven counts");
    let argmins: Vec<usize> = (0..failures.len()).filter(|&k| failures[k] == min).collect();
    let z = proportion_z(failures[3], n, failures[0], n);
    let elapsed = started.elapsed();
    Outcome {
        pass: z > 1.645 && argmins.iter().all(|k| (2..=4).contains(k)) && elapsed < Duration::from_secs(30 * 60),
        detail: format!(
            "failures per 200 runs for 0..6 leaders: {:?}; z(3 < 0) = {z:.2}; minimizers {argmins:?}; {:.0} s",
            failures,
            elapsed.as_secs_f64()
        ),
    }
}

fn c10_optimizer_invariants(shared: &mut Shared) -> Outcome {
    let monotone = shared.compass_runs.iter().all(|r| r.history.windows(2).all(|w| w[1].cost <= w[0].cost));
    let in_box = |pc: &PiecewiseConstant| {
        pc.velocities.iter().flatten().all(|u| u.x.abs() <= pc.u_bound && u.y.abs() <= pc.u_bound)
    };
    let compass_box = shared.compass_runs.iter().all(|r| in_box(&r.strategy));

    let scenario = Scenario::setting1();
    let mut params = ModelParams::setting1();
    params.noise_var = 0.0;
    let weights = CostWeights { mu_f: 1.0, mu_l: 1e-2, nu: 1e-2 };
    let mut rng = RandomSource::new(10).stream(&[0]);
    let mut mpc_box = true;
    let mut worst_fd: f64 = 0.0;
    for _ in 0..10 {
        let state = random_state(&mut rng);
        let cfg = MpcConfig { horizon: 4, inner_iterations: 5, ..MpcConfig::default() };
        let sol = mpc_step(&state, &cfg, &weights, &params, &scenario, None).expect("mpc");
        mpc_box &= sol.sequence.iter().flatten().all(|u| u.x.abs() <= cfg.u_bound && u.y.abs() <= cfg.u_bound);
        let seq: ControlSequence = (0..cfg.horizon)
            .map(|_| (0..state.leaders.len()).map(|_| v(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect())
            .collect();
        let g = |h: f64| mpc_gradient(&state, &seq, &weights, &params, &scenario, h).expect("gradient");
        let (fine, coarse, half) = (g(1e-3), g(1e-2), g(5e-3));
        // Richardson extrapolation of the coarse central differences
        let extrapolated: Vec<f64> = coarse.iter().zip(&half).map(|(c, h)| (4.0 * h - c) / 3.0).collect();
        let norm = extrapolated.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = fine.iter().zip(&extrapolated).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst_fd = worst_fd.max(diff / norm.max(f64::MIN_POSITIVE));
    }
    Outcome {
        pass: monotone && compass_box && mpc_box && worst_fd <= 0.05 && !shared.compass_runs.is_empty(),
        detail: format!(
            "{} compass histories non-increasing: {monotone}; controls in box: compass {compass_box}, MPC {mpc_box}; \
             gradient h=1e-3 vs extrapolated h=1e-2 worst relative gap {worst_fd:.2e}",
            shared.compass_runs.len()
        ),
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).expect("prefix").to_string_lossy().into_owned(), fs::read(&p).expect("read")));
            }
        }
    }
    out.sort();
    out
}

fn c11_reproducibility(_: &mut Shared) -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut micro = ExperimentConfig::preset("setting1").expect("preset");
    micro.replicates = 2;
    let mut meso = ExperimentConfig::preset("setting1").expect("preset");
    meso.mode = Mode::Meso;
    meso.meso.kinetic.samples = 1000;
    meso.meso.horizon_steps = 300;
    let mut sweep = ExperimentConfig::preset("setting3").expect("preset");
    sweep.replicates = 2;
    let jobs = [(micro, Command::Run), (meso, Command::Run), (sweep, Command::Sweep { leader_counts: vec![0, 3] })];
    let mut identical = true;
    let mut files = 0;
    for (i, (cfg, cmd)) in jobs.iter().enumerate() {
        let first = tmp.path().join(format!("job{i}_a"));
        let second = tmp.path().join(format!("job{i}_b"));
        execute(cfg, cmd, &first, true).expect("first execution");
        let check = rerun(&first.join("manifest.toml"), &second).expect("rerun");
        let (a, b) = (read_tree(&first), read_tree(&second));
        files += a.len();
        identical &= check.identical() && a == b;
    }
    Outcome { pass: identical, detail: format!("{files} files across micro, meso and sweep runs re-executed from manifests") }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("EVAC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, Criterion); 11] = [
        (1, "unit-kernel exactness", c1_kernels),
        (2, "setting 0 herding", c2_herding),
        (3, "setting 1 micro ordering", c3_micro_ordering),
        (4, "MPC consistency", c4_mpc),
        (5, "meso mass conservation", c5_mass),
        (6, "meso diffusion coefficient", c6_diffusion),
        (7, "micro-meso consistency", c7_micro_meso),
        (8, "setting 1 meso ordering", c8_meso_ordering),
        (9, "setting 3 smart obstacles", c9_smart_obstacles),
        (10, "optimizer invariants", c10_optimizer_invariants),
        (11, "reproducibility", c11_reproducibility),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let out = run(&mut shared);
        ran += 1;
        if !out.pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var("EVAC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
