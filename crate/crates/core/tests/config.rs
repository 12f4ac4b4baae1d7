use std::path::PathBuf;
use std::str::FromStr;

use flowlab::experiments::{ExperimentConfig, Scenario};
use flowlab::FlowError;

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped() -> Vec<(PathBuf, ExperimentConfig)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| (p.clone(), ExperimentConfig::load(&p).unwrap())).collect()
}

const MINIMAL: &str = r#"
scenario = "identity"
[grid]
dim = 2
resolution = [16, 16]
periods = [2.0, 2.0]
[background]
family = "flat"
[pass]
identity_residual_max = 1e-6
"#;

#[test]
fn every_shipped_config_loads_and_validates() {
    let all = shipped();
    assert!(all.len() >= 8);
    for scenario in Scenario::ALL {
        assert!(all.iter().any(|(_, c)| c.scenario == scenario), "no config exercises {scenario}");
    }
}

#[test]
fn configs_round_trip_through_toml() {
    for (path, cfg) in shipped() {
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{}", path.display());
        assert_eq!(back.hash(), cfg.hash());
    }
}

#[test]
fn hash_ignores_the_output_directory_only() {
    let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
    let mut moved = cfg.clone();
    moved.out = Some(PathBuf::from("/tmp/elsewhere"));
    assert_eq!(cfg.hash(), moved.hash());
    let mut reseeded = cfg.clone();
    reseeded.seed = 99;
    assert_ne!(cfg.hash(), reseeded.hash());
    assert_eq!(cfg.hash().len(), 64);
}

#[test]
fn pass_tables_are_checked_against_the_scenario() {
    let unknown = MINIMAL.replace("identity_residual_max", "kernel_mass_error_max");
    let err = ExperimentConfig::from_toml_str(&unknown).unwrap().validate().unwrap_err();
    assert!(matches!(&err, FlowError::Config(m) if m.contains("identity_shrink_min")), "{err}");
    let empty = MINIMAL.replace("identity_residual_max = 1e-6", "");
    let err = ExperimentConfig::from_toml_str(&empty).unwrap().validate().unwrap_err();
    assert!(err.to_string().contains("no pass criteria"), "{err}");
}

#[test]
fn unknown_scenarios_and_fields_fail_to_parse() {
    let msg = ExperimentConfig::from_toml_str(&MINIMAL.replace("\"identity\"", "\"teleport\"")).unwrap_err();
    assert!(msg.contains("teleport"), "{msg}");
    assert!(ExperimentConfig::from_toml_str(&format!("colour = 3\n{MINIMAL}")).is_err());
}

#[test]
fn scenario_names_parse_back() {
    for s in Scenario::ALL {
        assert_eq!(Scenario::from_str(s.name()).unwrap(), s);
        assert_eq!(s.to_string(), s.name());
        assert!(!s.pass_keys().is_empty());
    }
    let err = Scenario::from_str("nope").unwrap_err().to_string();
    for s in Scenario::ALL {
        assert!(err.contains(s.name()));
    }
}

#[test]
fn scenario_specific_requirements_are_enforced() {
    let kernel = MINIMAL.replace("\"identity\"", "\"kernel\"").replace("identity_residual_max", "kernel_mass_error_max");
    assert!(ExperimentConfig::from_toml_str(&kernel).unwrap().validate().is_err());
    let pullback = MINIMAL.replace("\"identity\"", "\"pullback\"").replace("identity_residual_max", "pullback_residual_max");
    assert!(ExperimentConfig::from_toml_str(&pullback).unwrap().validate().is_err());
    let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
    cfg.refine = Some(1);
    assert!(cfg.validate().is_err());
}
