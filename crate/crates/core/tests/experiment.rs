//! End-to-end checks of configuration loading, experiment outputs and
//! manifest re-execution.

use std::fs;

use evac_core::config::{load_config, save_strategy, ExperimentConfig, Mode, StrategySpec, PRESETS};
use evac_core::control::PiecewiseConstant;
use evac_core::experiment::{execute, read_manifest, rerun, run_experiment, Command, MANIFEST_FILE};
use evac_core::Vector2;

fn small_micro() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("setting1").unwrap();
    cfg.scenario.horizon_steps = 200;
    cfg
}

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESETS {
        let cfg = ExperimentConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, std::path::Path::new(".")).unwrap();
        assert_eq!(cfg, back, "{name}");
    }
}

#[test]
fn config_file_overrides_preset_and_loads_strategy_file() {
    let dir = tempfile::tempdir().unwrap();
    let strategy = PiecewiseConstant::new(100, vec![vec![Vector2::new(1.0, 0.5); 3]; 20], 2.0).unwrap();
    save_strategy(&dir.path().join("s.toml"), &strategy).unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "preset = \"setting1\"\nseed = 42\n[strategy]\nkind = \"file\"\npath = \"s.toml\"\n[model]\nc_align = 0.5\n",
    )
    .unwrap();
    let cfg = load_config(&dir.path().join("exp.toml")).unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.model.c_align, 0.5);
    assert_eq!(cfg.model.c_target, ExperimentConfig::preset("setting1").unwrap().model.c_target);
    assert_eq!(cfg.strategy, StrategySpec::PiecewiseConstant(strategy));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in ["", "preset = \"nowhere\"", "preset = \"setting1\"\nreplicates = 0", "preset = \"setting1\"\nbogus = 1"]
        .iter()
        .enumerate()
    {
        let path = dir.path().join(format!("bad{i}.toml"));
        fs::write(&path, text).unwrap();
        assert!(load_config(&path).is_err(), "accepted {text:?}");
    }
}

#[test]
fn micro_run_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_micro(), dir.path(), true).unwrap();
    for f in ["config.toml", "trajectory.csv", "metrics.toml", MANIFEST_FILE] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.outputs, report.manifest.outputs);
    assert!(manifest.outputs.contains_key("trajectory.csv"));
    assert!(!manifest.outputs.contains_key(MANIFEST_FILE));
}

#[test]
fn meso_run_writes_density_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_micro();
    cfg.mode = Mode::Meso;
    cfg.meso.horizon_steps = 100;
    cfg.meso.density_every = 50;
    cfg.meso.kinetic.samples = 500;
    run_experiment(&cfg, dir.path(), true).unwrap();
    let snapshots = fs::read_dir(dir.path().join("density")).unwrap().count();
    assert_eq!(snapshots, 3);
    assert!(dir.path().join("leaders.csv").is_file());
    assert!(dir.path().join("ensemble_final.csv").is_file());
}

#[test]
fn sweep_tabulates_every_leader_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("setting3").unwrap();
    cfg.replicates = 2;
    cfg.scenario.horizon_steps = 200;
    let report = execute(&cfg, &Command::Sweep { leader_counts: vec![0, 2] }, dir.path(), true).unwrap();
    assert_eq!(report.summaries.iter().map(|s| s.leaders).collect::<Vec<_>>(), vec![0, 2]);
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("leaders_2/replicate_0001").is_dir());
}

#[test]
fn sweep_rejects_fixed_per_leader_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_micro();
    cfg.strategy =
        StrategySpec::PiecewiseConstant(PiecewiseConstant::new(200, vec![vec![Vector2::ZERO; 3]], 1.0).unwrap());
    assert!(execute(&cfg, &Command::Sweep { leader_counts: vec![1, 2] }, dir.path(), true).is_err());
}

#[test]
fn rerun_reproduces_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let mut cfg = small_micro();
    cfg.replicates = 2;
    run_experiment(&cfg, &first, true).unwrap();
    let check = rerun(&first.join(MANIFEST_FILE), &dir.path().join("b")).unwrap();
    assert!(check.identical(), "{:?}", check.mismatched);

    let manifest = first.join(MANIFEST_FILE);
    let mut table: toml::Table = fs::read_to_string(&manifest).unwrap().parse().unwrap();
    table.get_mut("config").and_then(|c| c.get_mut("model")).and_then(|m| m.as_table_mut()).unwrap().insert("c_align".into(), toml::Value::Float(0.123));
    fs::write(&manifest, toml::to_string(&table).unwrap()).unwrap();
    assert!(read_manifest(&manifest).is_err());
}
