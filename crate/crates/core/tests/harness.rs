use std::path::{Path, PathBuf};

use imlab_core::harness::{
    apply_override, run_scenario, validate_config, validate_value, CutoffChoice, ExperimentConfig, Scenario,
};
use imlab_core::Error;
use proptest::prelude::*;
use serde_json::{json, Value};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("imlab-harness-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn small(scenarios: &[&str], out: &Path) -> ExperimentConfig {
    validate_value(json!({
        "scenarios": scenarios,
        "output_dir": out,
        "grid": { "max_mode": 8 },
        "gaps": { "lambda_max": 2000, "growth_bounds": [100, 1000] },
        "evolve": { "t_end": 0.2, "dt": 0.02 },
        "radius": { "ensemble_size": 2, "burn_in": 0.5, "horizon": 1.0, "dt": 0.05 },
        "cone": { "pairs": 6, "field_pairs": 2, "field_t_end": 0.1 },
        "manifold": { "count": 3, "lipschitz_samples": 4, "inertial_t_end": 0.2, "tracking_horizon": 1.0, "tracking_seeds": 1 },
    }))
    .unwrap()
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn minimal_config_takes_defaults() {
    let c = validate_config("{}").unwrap();
    assert_eq!(c.model.dim, 2);
    assert_eq!(c.model.theta, Some(1.0));
    assert_eq!(c.grid.max_mode, Some(32));
    assert_eq!(c.cutoff, CutoffChoice::Radius(0.005));
    assert_eq!(c.manifold.extent, Some(0.015));
    assert!(c.scenarios.is_empty());
    let c3 = validate_config(r#"{"model": {"dim": 3}, "cutoff": "empirical"}"#).unwrap();
    assert_eq!(c3.model.theta, Some(1.25));
    assert_eq!(c3.grid.max_mode, Some(8));
    assert!(matches!(c3.cutoff, CutoffChoice::Empirical(_)));
}

#[test]
fn three_dimensions_require_the_hyperviscous_exponent() {
    let errors = validate_config(r#"{"model": {"dim": 3, "theta": 1.0}}"#).unwrap_err();
    assert!(errors.iter().any(|e| e.contains("model.theta") && e.contains("3D requires θ = 5/4")), "{errors:?}");
}

#[test]
fn negative_viscosity_is_rejected() {
    let errors = validate_config(r#"{"model": {"nu": -1.0}}"#).unwrap_err();
    assert!(errors.iter().any(|e| e.starts_with("model.nu")), "{errors:?}");
}

#[test]
fn unknown_keys_are_errors() {
    let errors = validate_config(r#"{"model": {"viscosity": 1.0}}"#).unwrap_err();
    assert!(errors[0].contains("viscosity"), "{errors:?}");
    assert!(validate_config(r#"{"scenarios": ["full4d"]}"#).is_err());
    assert!(validate_config(r#"{"cutoff": "guess"}"#).is_err());
}

#[test]
fn every_violation_is_listed() {
    let errors = validate_config(r#"{"model": {"dim": 4, "nu": 0}, "manifold": {"dt": 0}, "scenarios": ["gaps", "gaps"]}"#).unwrap_err();
    for field in ["model.dim", "model.nu", "manifold.dt", "scenarios"] {
        assert!(errors.iter().any(|e| e.starts_with(field)), "{field}: {errors:?}");
    }
}

#[test]
fn empty_scenario_list_writes_nothing() {
    let out = scratch("empty");
    let report = run_scenario(&small(&[], &out)).unwrap();
    assert!(report.outputs.is_empty());
    assert!(!out.exists());
}

#[test]
fn invalid_config_fails_before_running() {
    let mut c = small(&["gaps"], &scratch("invalid"));
    c.model.nu = -1.0;
    let err = run_scenario(&c).unwrap_err();
    assert!(err.is_validation());
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn same_config_gives_identical_records() {
    let scenarios = ["gaps", "annulus", "stationary", "evolve", "radius", "cone-check"];
    let out = scratch("det");
    let config = small(&scenarios, &out);
    let first = run_scenario(&config).unwrap();
    let bytes: Vec<Vec<u8>> = first
        .outputs
        .iter()
        .flat_map(|o| o.files.iter().map(|f| std::fs::read(f).unwrap()))
        .collect();
    std::fs::remove_dir_all(&out).unwrap();
    let second = run_scenario(&config).unwrap();
    assert_eq!(first, second);
    let files: Vec<&PathBuf> = second.outputs.iter().flat_map(|o| &o.files).collect();
    assert_eq!(files.len(), bytes.len());
    for (f, b) in files.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(f).unwrap(), b, "{}", f.display());
    }
}

#[test]
fn records_carry_hash_versions_and_the_resolved_config() {
    let out = scratch("records");
    let config = small(&["stationary", "evolve"], &out);
    let report = run_scenario(&config).unwrap();
    for o in &report.outputs {
        let recs = records(&o.files[0]);
        assert_eq!(recs.len(), o.records);
        assert_eq!(recs[0]["kind"], "config");
        let embedded: ExperimentConfig = serde_json::from_value(recs[0]["data"].clone()).unwrap();
        assert_eq!(embedded, config);
        for r in &recs {
            assert_eq!(r["config_hash"], report.config_hash.as_str());
            assert_eq!(r["scenario"], o.scenario.name());
            assert_eq!(r["versions"]["manifold"], env!("CARGO_PKG_VERSION"));
        }
        let csv = std::fs::read_to_string(&o.files[1]).unwrap();
        assert!(csv.starts_with("stage,key,value\n"));
        assert!(o.files.iter().any(|f| f.extension().is_some_and(|e| e == "snap")));
    }
    let evolve = records(&out.join("evolve.ndjson"));
    assert_eq!(evolve.iter().filter(|r| r["kind"] == "trajectory").count(), 11);
}

#[test]
fn snapshots_read_back_as_the_stationary_state() {
    let out = scratch("snap");
    run_scenario(&small(&["stationary"], &out)).unwrap();
    let v = imlab_core::spectral_field::read_snapshot_file::<f64>(out.join("stationary_stationary.snap")).unwrap();
    let recs = records(&out.join("stationary.ndjson"));
    let stationary = recs.iter().find(|r| r["kind"] == "stationary").unwrap();
    assert_eq!(v.norm(), stationary["data"]["v_norm"].as_f64().unwrap());
}

#[test]
fn small_manifold_pipeline_meets_its_checks() {
    let out = scratch("manifold");
    let report = run_scenario(&small(&["manifold", "inertial-form", "tracking"], &out)).unwrap();
    let value = |scenario: Scenario, stage: &str, key: &str| -> String {
        let o = report.outputs.iter().find(|o| o.scenario == scenario).unwrap();
        o.summary.iter().find(|r| r.0 == stage && r.1 == key).unwrap().2.clone()
    };
    assert!(value(Scenario::Manifold, "manifold", "lipschitz").parse::<f64>().unwrap() <= 1.05);
    assert_eq!(value(Scenario::Manifold, "manifold", "doubling_geometric"), "true");
    assert_eq!(value(Scenario::InertialForm, "inertial_form", "pass"), "true");
    assert!(value(Scenario::Tracking, "tracking", "min_omega").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn dimension_mismatched_pipelines_are_validation_errors() {
    let err = run_scenario(&small(&["sac-check"], &scratch("sac2d"))).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(err.to_string().contains("model.dim"));
}

#[test]
fn missing_gap_is_a_numerical_failure() {
    let mut c = small(&["manifold"], &scratch("nogap"));
    c.gaps.lambda_max = 2;
    c.cutoff = CutoffChoice::Radius(1.0);
    c.model.forcing.amplitude = 1.0;
    let err = run_scenario(&c).unwrap_err();
    assert!(err.is_numerical(), "{err}");
    assert!(err.to_string().starts_with("manifold/gap"), "{err}");
}

#[test]
fn projector_modes_must_be_a_cumulative_count() {
    let mut c = small(&["manifold"], &scratch("modes"));
    c.projector.modes = Some(5);
    let err = run_scenario(&c).unwrap_err();
    assert!(err.to_string().contains("projector.modes"), "{err}");
    assert!(err.is_validation());
}

#[test]
fn overrides_feed_validation() {
    let mut v = json!({});
    apply_override(&mut v, "dim", "3").unwrap();
    apply_override(&mut v, "theta", "1").unwrap();
    assert!(validate_value(v.clone()).is_err());
    apply_override(&mut v, "theta", "1.25").unwrap();
    apply_override(&mut v, "grid", "6").unwrap();
    let c = validate_value(v).unwrap();
    assert_eq!(c.grid.max_mode, Some(6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resolved_config_round_trips(
        dim in 2usize..=3,
        nu in 0.01f64..10.0,
        seed in any::<u64>(),
        max_mode in 4usize..40,
        radius in 1e-4f64..1.0,
        empirical in any::<bool>(),
    ) {
        let cutoff = if empirical { json!("empirical") } else { json!(radius) };
        let c = validate_value(json!({
            "seed": seed,
            "model": { "dim": dim, "nu": nu },
            "grid": { "max_mode": max_mode },
            "cutoff": cutoff,
        })).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back = validate_config(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }
}
