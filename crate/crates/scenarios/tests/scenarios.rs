//! End-to-end checks of the scenario runners at reduced sizes.

use std::fs;

use rkhs_oed::config::{NoiseKind, SetKind};
use rkhs_oed::contamination::DesignKind;
use rkhs_oed::ellipse::IntervalSet;
use rkhs_oed::lyapunov::{self, ControlSystem};
use rkhs_oed::numerics::{rk4, stream_rng};
use rkhs_oed::{contamination, coverage, ellipse, execute, pharma, ScenarioConfig, ScenarioKind};
use serde_json::json;

fn small(kind: ScenarioKind, overrides: serde_json::Value) -> ScenarioConfig {
    let mut doc = json!({ "schema": 1 });
    if let (Some(d), Some(o)) = (doc.as_object_mut(), overrides.as_object()) {
        d.extend(o.clone());
    }
    ScenarioConfig::resolve(&doc, Some(kind)).unwrap()
}

fn small_coverage(delta: f64) -> ScenarioConfig {
    small(
        ScenarioKind::Coverage,
        json!({ "delta": delta, "coverage": { "replicas_fixed": 400, "replicas_adaptive": 200, "steps": 60 } }),
    )
}

#[test]
fn reruns_produce_identical_bytes() {
    let cfg = small_coverage(0.1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    execute(&cfg, a.path()).unwrap();
    execute(&cfg, b.path()).unwrap();
    for name in ["coverage.csv", "coverage_replicas.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn outputs_carry_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::defaults(ScenarioKind::Ellipse);
    execute(&cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("ellipse.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "set_kind,design_kind,interval_lo,interval_hi");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["schema"], 1);
    assert!(meta["git_hash"].is_string() && meta["runtime_seconds"].is_number());

    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ScenarioKind::Lyapunov, json!({ "budget": 12, "lyapunov": { "seeds": 1, "tube_angles": 20 } }));
    execute(&cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("lyapunov.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,strategy,seed,set_kind,sup_dv_bound,certified");
}

#[test]
fn unknown_schema_and_fields_are_rejected() {
    assert!(ScenarioConfig::resolve(&json!({ "schema": 2 }), Some(ScenarioKind::Ellipse)).is_err());
    assert!(ScenarioConfig::resolve(&json!({}), Some(ScenarioKind::Ellipse)).is_err());
    assert!(ScenarioConfig::resolve(&json!({ "schema": 1, "sigmaa": 1.0 }), Some(ScenarioKind::Ellipse)).is_err());
    assert!(ScenarioConfig::resolve(&json!({ "schema": 1, "scenario": "pharma" }), Some(ScenarioKind::Ellipse)).is_err());
}

#[test]
fn every_interval_contains_the_true_value() {
    let rows = ellipse::run(&ScenarioConfig::defaults(ScenarioKind::Ellipse)).unwrap();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert!(r.interval_lo <= 0.0 && r.interval_hi >= 0.0, "{r:?}");
    }
    assert!(rows.iter().any(|r| r.set_kind == IntervalSet::ProjectedBiased));
}

#[test]
fn half_confidence_sets_cover_at_least_half() {
    for noise in [NoiseKind::Gaussian, NoiseKind::Uniform] {
        let mut cfg = small_coverage(0.5);
        cfg.coverage.as_mut().unwrap().noise = noise;
        let out = coverage::run(&cfg).unwrap();
        for s in &out.summary {
            assert!(s.coverage >= 0.48, "{s:?}");
        }
        assert_eq!(out.replicas.iter().filter(|r| r.set_kind == SetKind::Adaptive).count(), 200);
    }
}

#[test]
fn without_contamination_both_optimized_designs_coincide() {
    let cfg = small(
        ScenarioKind::Contamination,
        json!({ "contamination": { "frequencies": 0, "contamination_scale": 0.0, "budgets": [10, 40], "seeds": 50 } }),
    );
    let out = contamination::run(&cfg).unwrap();
    for budget in [10, 40] {
        let get = |k: DesignKind| out.rows.iter().find(|r| r.budget == budget && r.design_kind == k).unwrap().mse;
        assert_eq!(get(DesignKind::Aware), get(DesignKind::Full));
        assert!(get(DesignKind::Aware) <= get(DesignKind::Random));
    }
}

#[test]
fn noiseless_pharma_recovers_rates_from_an_off_centre_box() {
    let cfg = small(
        ScenarioKind::Pharma,
        json!({ "sigma": 0.0, "pharma": { "seeds": 1, "sample_counts": [6], "gamma_box": [[4.2, 6.2], [9.3, 11.1], [8.8, 10.9]] } }),
    );
    let out = pharma::run(&cfg).unwrap();
    for r in &out.rows {
        assert!(r.gamma_mse.sqrt() <= 1e-3, "{r:?}");
    }
}

#[test]
fn rk4_error_drops_sixteenfold_when_the_step_halves() {
    let rhs = |_t: f64, y: &[f64]| vec![y[1], -y[0]];
    let err = |steps: usize| {
        let traj = rk4(&rhs, &[1.0, 0.0], 2.0, steps);
        (traj.last().unwrap()[0] - 2f64.cos()).abs()
    };
    let ratio = err(20) / err(40);
    assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
}

fn control_system() -> ControlSystem {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Lyapunov);
    ControlSystem::fit(cfg.feature_map().unwrap(), cfg.lyapunov.as_ref().unwrap()).unwrap()
}

#[test]
fn derivative_oracle_error_is_first_order_in_the_interval() {
    let mut sys = control_system();
    let x = [0.3, -0.4];
    let exact = sys.drift(&x).unwrap();
    let mut errs = Vec::new();
    for dt in [1e-2, 5e-3] {
        sys.dt = dt;
        let y = sys.derivative_oracle(&x, &mut stream_rng(0, 0), 0.0).unwrap();
        errs.push(((y[0] - exact[0]).powi(2) + (y[1] - exact[1]).powi(2)).sqrt());
    }
    assert!(errs[0] > 0.0 && (errs[0] / errs[1] - 2.0).abs() < 0.1, "{errs:?}");
}

#[test]
fn fitted_model_certifies_with_exact_coefficients() {
    let sys = control_system();
    let pts = lyapunov::tube(200, 3, sys.tube_width);
    let sup = lyapunov::ground_truth_sup(&sys, &pts).unwrap();
    let nominal = -2.0 * sys.gain * sys.tube_width * sys.tube_width;
    assert!(sup < 0.0 && sup <= nominal * 0.9, "{sup} vs {nominal}");
}
