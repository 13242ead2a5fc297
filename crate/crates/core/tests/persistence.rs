use std::fs;

use htbandits::estimators::HeavyTailSpec;
use htbandits::harness::io::{self, CURVE_FILE, MANIFEST_FILE, RESULTS_FILE};
use htbandits::harness::{replicate, ExperimentConfig, GridSpec, InstanceSpec, PolicySpec};
use htbandits::rewards::{FiniteArmInstance, RewardDistribution};

fn config() -> ExperimentConfig {
    let arms = [0.4, 0.0, 0.2]
        .iter()
        .map(|&shift| RewardDistribution::ParetoShifted {
            shape: 2.5,
            scale: 0.1,
            shift,
        })
        .collect();
    ExperimentConfig {
        policy: PolicySpec::BaseH {
            grid: GridSpec::Minimax { batches: 3 },
        },
        instance: InstanceSpec::Finite(FiniteArmInstance::new(arms).unwrap()),
        horizon: 3000,
        spec: HeavyTailSpec::new(1.0, 0.05, 12.0).unwrap(),
        replications: 7,
        base_seed: 42,
        curve: true,
        certify: true,
    }
}

#[test]
fn export_load_export_is_byte_identical() {
    let cfg = config();
    let record = replicate(&cfg, 2).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    io::export(&record, &cfg, 1.5, a.path()).unwrap();
    let (manifest, loaded) = io::load_record(a.path()).unwrap();
    assert_eq!(loaded, record);
    assert_eq!(manifest.config, cfg);
    assert_eq!(manifest.config_hash, cfg.hash());
    io::export(&loaded, &manifest.config, manifest.wall_time_secs, b.path()).unwrap();
    for file in [RESULTS_FILE, CURVE_FILE, MANIFEST_FILE] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn replication_is_independent_of_thread_count() {
    let cfg = config();
    assert_eq!(replicate(&cfg, 1).unwrap(), replicate(&cfg, 4).unwrap());
}

#[test]
fn malformed_results_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RESULTS_FILE);

    fs::write(&path, "rep,seed,final_regret\n0,1,2.0\n").unwrap();
    let msg = io::read_results(&path).unwrap_err().to_string();
    assert!(msg.contains("header"), "{msg}");

    fs::write(&path, "replication,seed,final_regret\n0,1,2.0\n2,5,1.0\n").unwrap();
    let msg = io::read_results(&path).unwrap_err().to_string();
    assert!(msg.contains("line 3"), "{msg}");

    fs::write(&path, "replication,seed,final_regret\n0,1,2.0\n1,x,1.0\n").unwrap();
    let err = io::read_results(&path).unwrap_err();
    assert!(err.is_config());
    let msg = err.to_string();
    assert!(msg.contains("line 3") && msg.contains("`seed`"), "{msg}");
}

#[test]
fn config_round_trips_through_json() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    io::save_config(&cfg, &path).unwrap();
    let back = io::load_config(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}
