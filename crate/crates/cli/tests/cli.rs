use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpinn")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Overrides that shrink a run to seconds.
const SMALL: [&str; 14] = [
    "--set", "grid.nx=5", "--set", "grid.ny=5", "--set", "grid.nt=4", "--set", "eval.energy_nx=8", "--set", "eval.energy_nt=4",
    "--set", "eval.reference_n=32", "--set", "eval.reference_snapshots=9",
];

#[test]
fn missing_config_exits_2() {
    let out = qpinn(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"schema_version": 1, "epochz": 3}"#).unwrap();
    let out = qpinn(&["run", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    fs::write(&cfg, r#"{"schema_version": 9}"#).unwrap();
    assert_eq!(qpinn(&["run", "--config", path(&cfg)]).status.code(), Some(2));
}

#[test]
fn run_with_epoch_override_writes_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = configs().join("vacuum_qpinn.json");
    let mut args = vec!["run", "--config", path(&cfg), "--out", path(&out_dir), "--set", "epochs=10", "--set", "eval.every=5"];
    args.extend(SMALL);
    let out = qpinn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    for f in ["summary.json", "energy.json", "config.json", "final.ckpt"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    // refuses a non-empty directory without --force
    let again = qpinn(&args);
    assert_eq!(again.status.code(), Some(2));
    args.push("--force");
    assert!(qpinn(&args).status.success());
}

#[test]
fn cross_mesh_override_reports_table_count() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cm");
    let cfg = configs().join("vacuum_qpinn.json");
    let mut args = vec!["run", "--config", path(&cfg), "--out", path(&out_dir), "--set", "epochs=1", "--set", "model.ansatz=cross_mesh"];
    args.extend(SMALL);
    let out = qpinn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["counts"]["total"], 67_044);
}

#[test]
fn reference_is_byte_identical_and_tags_dielectric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("dielectric_qpinn.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = qpinn(&["reference", "--config", path(&cfg), "--out", path(d), "--set", "reference.nx=48", "--set", "reference.ny=48", "--set", "reference.n_snapshots=8"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["ez.f64", "hx.f64", "hy.f64", "eps.f64", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["slab_x0"], 0.3);
    assert_eq!(meta["times"].as_array().unwrap().len(), 8);
}

#[test]
fn reference_cfl_violation_exits_2() {
    let cfg = configs().join("vacuum_qpinn.json");
    let dir = tempfile::tempdir().unwrap();
    let out = qpinn(&["reference", "--config", path(&cfg), "--out", path(dir.path()), "--set", "reference.nx=32", "--set", "reference.ny=32", "--set", "reference.dt=0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_suites_pass() {
    for suite in ["qsim", "physics"] {
        let out = qpinn(&["verify", suite]);
        assert!(out.status.success(), "{suite}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    }
    let out = qpinn(&["verify", "grad", "--quick"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ablation_sweep.json");
    let sweep_dir = dir.path().join("sweep");
    let mut args = vec![
        "sweep", "--config", path(&cfg), "--out", path(&sweep_dir), "--jobs", "2", "--set", "epochs=2", "--set", "sweep.seeds=[1,2]",
        "--set", "sweep.energy=[true]", "--set", "model.hidden_width=8", "--set", "model.rff_features=8",
    ];
    args.extend(SMALL);
    let out = qpinn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells: serde_json::Value = serde_json::from_str(&fs::read_to_string(sweep_dir.join("cells.json")).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 8);
    let agg = fs::read_to_string(sweep_dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 5);

    let report = dir.path().join("report.csv");
    let out = qpinn(&["report", "--runs", path(&sweep_dir), "--out", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(report).unwrap().lines().count(), 5);
}
