// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::Command;

use heatflow::experiments::runner::{crosscheck_oracle, dissipation_probe, taylor_estimate};
use heatflow::experiments::fit::{fit_polynomial, log_log_slope};
use heatflow::experiments::*;
use heatflow::HeatError;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("heatflow-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(1, 4.0, 1.0, 1.0, 0.2, 2.0);
    cfg.seeds = vec![0, 1];
    cfg.eta_grid = vec![-0.1, 0.2];
    cfg.time.horizon = Some(3.0);
    cfg.time.record_every = Some(25);
    cfg
}

fn csv_bytes(cfg: &ScenarioConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    run_scenario(cfg).unwrap().write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn shipped_configs_load_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn field_larger_than_box_is_rejected() {
    let cfg = ScenarioConfig::new(1, 4.0, 1.0, 1.0, 0.2, 6.0);
    match cfg.validate() {
        Err(HeatError::Config(errs)) => {
            assert_eq!(errs.len(), 1);
            assert!(errs[0].contains("exceeds box half side"));
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn validation_collects_every_error() {
    let mut cfg = ScenarioConfig::new(1, 4.0, -1.0, 0.0, 0.2, 6.0);
    cfg.seeds.clear();
    cfg.time.horizon = Some(1.0);
    match cfg.validate() {
        Err(HeatError::Config(errs)) => assert_eq!(errs.len(), 5, "{errs:?}"),
        other => panic!("expected config error, got {other:?}"),
    }
    assert!(run_scenario(&cfg).is_err());
}

#[test]
fn unknown_fields_are_rejected() {
    let text = r#"{"half_sides": [4], "eta_grid": [0.1], "l_grid": [2], "colour": 3}"#;
    assert!(serde_json::from_str::<ScenarioConfig>(text).is_err());
    let text = r#"{"half_sides": [4], "eta_grid": [0.1], "l_grid": [2], "time": {"stepsize": 1}}"#;
    assert!(serde_json::from_str::<ScenarioConfig>(text).is_err());
    let text = r#"{"half_sides": [4], "eta_grid": [0.1], "l_grid": [2]}"#;
    let cfg: ScenarioConfig = serde_json::from_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = small();
    let back: ScenarioConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    let mut other = cfg.clone();
    other.beta = 2.0;
    assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
}

#[test]
fn zero_field_gives_zero_columns() {
    let mut cfg = small();
    cfg.eta_grid = vec![0.0];
    let out = run_scenario(&cfg).unwrap();
    assert!(!out.rows.is_empty());
    for r in &out.rows {
        for v in [r.s, r.p, r.work, r.q_rel] {
            assert!(v.abs() <= 1e-12, "{r:?}");
        }
    }
    assert!(out.checks.iter().all(|c| c.passed));
}

#[test]
fn run_rows_are_sorted_and_pass_their_checks() {
    let cfg = small();
    let out = run_scenario(&cfg).unwrap();
    let keys: Vec<(u64, i64)> = out
        .rows
        .iter()
        .map(|r| (r.seed, (r.eta * 1e6) as i64))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(out.checks.iter().all(|c| c.passed), "{:?}", out.checks);
    assert!(out.rows.iter().all(|r| r.s_fock.is_none()));
}

#[test]
fn csv_is_byte_identical_across_reruns_and_thread_counts() {
    let cfg = small();
    let a = csv_bytes(&cfg);
    let b = csv_bytes(&cfg);
    let c = heatflow::par::with_threads(3, || csv_bytes(&cfg));
    let d = heatflow::par::with_threads(1, || csv_bytes(&cfg));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with(
        "L,seed,eta,l,t,S,P,work,Q_rel,first_law_residual,balance_residual,S_fock,P_fock,work_fock,Q_fock\n"
    ));
}

#[test]
fn oracle_columns_match_on_small_boxes() {
    let mut cfg = ScenarioConfig::new(1, 2.0, 0.5, 1.0, 0.2, 2.0);
    cfg.seeds = vec![3];
    cfg.time.record_every = Some(40);
    cfg.oracle = true;
    let out = run_scenario(&cfg).unwrap();
    assert!(out.rows.iter().all(|r| r.q_fock.is_some()));
    let agreement = out.checks.iter().find(|c| c.name == "oracle_agreement").unwrap();
    assert!(agreement.passed && agreement.value <= 1e-8);
}

#[test]
fn oracle_refuses_large_boxes() {
    let cfg = ScenarioConfig::new(1, 8.0, 0.5, 1.0, 0.2, 2.0);
    assert!(matches!(crosscheck_oracle(&cfg), Err(HeatError::ResourceLimit(_))));
}

#[test]
fn manifest_records_run_parameters() {
    let cfg = small();
    let m = RunManifest::new("run", &cfg).unwrap();
    assert_eq!(m.schema_version, SCHEMA_VERSION);
    assert_eq!(m.config_hash.len(), 64);
    assert_eq!(m.config_hash, cfg.hash().unwrap());
    assert_eq!(m.seeds, cfg.seeds);
    assert!((m.step - 2.0 / 400.0).abs() < 1e-15);
    assert_eq!(m.integrator_steps, 600);
    assert_eq!(m.quadrature_nodes, cfg.potential.quadrature_nodes);
    assert_eq!(m.parallel, cfg!(feature = "rayon"));
    let json = serde_json::to_value(&m).unwrap();
    for key in ["tool_version", "command", "outputs", "checks"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn sweep_grid_preconditions() {
    let mut cfg = ScenarioConfig::new(1, 8.0, 1.0, 1.0, 0.1, 2.0);
    cfg.l_grid = vec![1.0, 2.0, 4.0];
    cfg.eta_grid = vec![0.0, 0.1, 0.2];
    assert!(matches!(scaling_sweep(&cfg), Err(HeatError::InvalidArgument(_))));
    cfg.eta_grid = vec![0.1, -0.1, 0.2, -0.2];
    cfg.l_grid = vec![1.0, 2.0];
    assert!(matches!(scaling_sweep(&cfg), Err(HeatError::InvalidArgument(_))));
    cfg.l_grid = vec![1.0, 2.0, 4.0];
    cfg.dim = 3;
    cfg.half_sides = vec![4.0];
    assert!(matches!(scaling_sweep(&cfg), Err(HeatError::InvalidArgument(_))));
}

#[test]
fn taylor_grid_preconditions() {
    let mut cfg = ScenarioConfig::new(1, 4.0, 1.0, 1.0, 0.1, 2.0);
    cfg.eta_grid = vec![0.0, 0.1, 0.2, 0.3, 0.4];
    assert!(matches!(taylor_estimate(&cfg, 0), Err(HeatError::InvalidArgument(_))));
    cfg.eta_grid = vec![-0.2, -0.1, 0.0, 0.1, 0.2];
    assert!(matches!(taylor_estimate(&cfg, 7), Err(HeatError::InvalidArgument(_))));
    assert!(matches!(taylor_estimate(&cfg, 3), Err(HeatError::InvalidArgument(_))));
}

#[test]
fn taylor_low_orders_vanish() {
    let mut cfg = ScenarioConfig::new(1, 6.0, 1.0, 1.0, 0.1, 2.0);
    cfg.seeds = vec![0];
    cfg.eta_grid = vec![-0.2, -0.1, 0.0, 0.1, 0.2];
    cfg.l_grid = vec![1.0, 2.0, 3.0];
    for m in 0..=1 {
        let rep = taylor_estimate(&cfg, m).unwrap();
        assert!(rep.checks.iter().all(|c| c.passed), "m = {m}: {:?}", rep.checks);
    }
    let rep = taylor_estimate(&cfg, 2).unwrap();
    assert!(rep.rows.iter().all(|r| r.estimate > 0.0));
}

#[test]
fn thermolimit_needs_increasing_sizes() {
    let mut cfg = ScenarioConfig::new(1, 4.0, 1.0, 1.0, 0.2, 2.0);
    cfg.half_sides = vec![4.0, 8.0];
    assert!(thermolimit_sweep(&cfg).is_err());
    cfg.half_sides = vec![4.0, 8.0, 6.0];
    assert!(thermolimit_sweep(&cfg).is_err());
}

#[test]
fn dissipation_starts_at_zero_and_keeps_the_plateau() {
    let mut cfg = ScenarioConfig::new(1, 16.0, 1.0, 1.0, 0.2, 2.0);
    cfg.dissipation.observation_half_side = 2.0;
    cfg.dissipation.tail = 6.0;
    let rep = dissipation_probe(&cfg).unwrap();
    assert_eq!(rep.rows[0].s_obs, 0.0);
    assert_eq!(rep.rows[0].s_total, 0.0);
    assert!(rep.peak_obs > 0.0);
    assert!(rep.plateau_drift <= 1e-8);
    cfg.dissipation.observation_half_side = 20.0;
    assert!(dissipation_probe(&cfg).is_err());
}

#[test]
fn fits_recover_polynomials_and_slopes() {
    let x: Vec<f64> = (0..7).map(|i| -0.3 + 0.1 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v * v - 0.5 * v.powi(4)).collect();
    let fit = fit_polynomial(&x, &y, 4).unwrap();
    assert!(fit.coefficient(0).abs() < 1e-12);
    assert!((fit.coefficient(2) - 2.0).abs() < 1e-9);
    let x = [0.1, 0.2, 0.4, 0.8];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(3)).collect();
    assert!((log_log_slope(&x, &y).unwrap() - 3.0).abs() < 1e-12);
    assert!(log_log_slope(&[1.0, 0.0], &[1.0, 1.0]).is_err());
}

#[test]
fn check_constructors() {
    assert!(Check::at_most("a", 1.0, 1.0).passed);
    assert!(!Check::at_most("a", 1.1, 1.0).passed);
    assert!(Check::at_least("b", 1.0, 1.0).passed);
    assert!(!Check::at_least("b", f64::NAN, 1.0).passed);
    assert!(!Check::flag("c", false).passed);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatflow"))
}

#[test]
fn cli_run_writes_results_and_manifest() {
    let out = scratch("run");
    let status = cli()
        .args(["run", "--config"])
        .arg(configs_dir().join("run.json"))
        .arg("--out")
        .arg(&out)
        .args(["--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["results.csv", "manifest.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seeds"], serde_json::json!([5]));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("8.0,5,") || l.starts_with("16.0,5,")));
    let first = std::fs::read(out.join("results.csv")).unwrap();
    let again = scratch("run-again");
    let status = cli()
        .args(["run", "--threads", "2", "--config"])
        .arg(configs_dir().join("run.json"))
        .arg("--out")
        .arg(&again)
        .args(["--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(first, std::fs::read(again.join("results.csv")).unwrap());
}

#[test]
fn cli_oracle_subcommand_passes() {
    let out = scratch("oracle");
    let status = cli()
        .args(["oracle", "--seed", "1", "--config"])
        .arg(configs_dir().join("oracle.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("results.csv").exists());
}

#[test]
fn cli_rejects_bad_configs_with_exit_code_two() {
    let dir = scratch("bad");
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"half_sides": [4], "eta_grid": [0.1], "l_grid": [6], "beta": -1}"#,
    )
    .unwrap();
    let output = cli()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("exceeds box half side") && err.contains("beta"), "{err}");
    let missing = cli()
        .args(["run", "--config"])
        .arg(dir.join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
