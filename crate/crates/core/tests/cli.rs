//! End-to-end checks of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn gpmean(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpmean"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "kernel": {"kind": "ou", "eta": 0.5, "sigma": 1.0},
            "model": {"kind": "linear_density",
                      "basis": [{"kind": "sine", "amp": 6.0, "freq": -7.9}],
                      "box": {"lower": [-10.0], "upper": [10.0]}},
            "theta0": [-4.0],
            "cases": [{"n": 200, "epsilon": 0.01}],
            "replications": 1,
            "master_seed": 5
        }"#,
    )
    .unwrap();
    let sim = gpmean(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let obs = dir.path().join("obs_n200_eps0.01_r0.csv");
    let text = std::fs::read_to_string(&obs).unwrap();
    assert!(text.starts_with("t,x\n"));
    assert_eq!(text.lines().count(), 201);

    let est = gpmean(
        &["estimate", "--config", cfg.to_str().unwrap(), "--obs", obs.to_str().unwrap(), "--epsilon", "0.01"],
        dir.path(),
    );
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("estimate.json")).unwrap())
            .unwrap();
    for key in ["theta_hat", "phi", "qgaic", "sigma_n", "boundary_flag", "optimizer_stats"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let theta = json["theta_hat"][0].as_f64().unwrap();
    assert!((theta + 4.0).abs() < 0.1, "{theta}");
}

#[test]
fn exit_codes_separate_config_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = gpmean(&["mc", "--preset", "missing"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"kernel\": 3}").unwrap();
    let bad = gpmean(&["mc", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    // Two identical Dirac sites in one cell make the discrete information singular.
    std::fs::write(
        &cfg,
        r#"{
            "kernel": {"kind": "wiener"},
            "model": {"kind": "dirac", "sites": [0.41, 0.42], "box": {"lower": [-5, -5], "upper": [5, 5]}},
            "theta0": [1.0, 1.0],
            "cases": [{"n": 10, "epsilon": 0.1}],
            "replications": 2,
            "master_seed": 1
        }"#,
    )
    .unwrap();
    let singular = gpmean(&["mc", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(singular.status.code(), Some(3), "{}", String::from_utf8_lossy(&singular.stderr));
}

#[test]
fn rate_table_flags_small_noise_on_coarse_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpmean(&["rate-table", "--preset", "paper42"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("rate_table.csv")).unwrap();
    let flagged: Vec<&str> = csv.lines().skip(1).filter(|l| l.ends_with("true")).collect();
    assert_eq!(flagged.len(), 1);
    assert!(flagged[0].starts_with("100,1.0000000000000000e-2"));
}

#[test]
fn mc_emits_four_table_rows_for_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpmean(&["mc", "--preset", "paper42", "--replications", "20"], dir.path());
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    let keys: Vec<&str> = rows[1..].iter().map(|r| r.rsplitn(3, ',').last().unwrap()).collect();
    assert_eq!(
        keys,
        [
            "100,1.0000000000000001e-1",
            "1000,1.0000000000000001e-1",
            "100,1.0000000000000000e-2",
            "1000,1.0000000000000000e-2"
        ]
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["asymptotic_sd"][0].as_f64().unwrap() > 0.0);
}
