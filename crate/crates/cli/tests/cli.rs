use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn run(args: &[&str], cfg: &str, out: &Path, overrides: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_piezosim"));
    cmd.args(args).arg("--config").arg(config(cfg)).arg("--out").arg(out);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &[&str] = &["grid.segments=4", "stepper.t_end_s=0.01", "stepper.sample_every=1", "excitation.duration_s=0.005"];

#[test]
fn simulate_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], "closedloop", dir.path(), SHORT);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trajectory.csv", "fields.csv", "decay_report.json", "plot_tip.py"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,u,y,H,v_tip,w_tip"));
    // 0.01 s at dt = 1e-4, plus the initial sample.
    assert_eq!(lines.count(), 101);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("decay_report.json")).unwrap()).unwrap();
    assert_eq!(report["segments"], 4);
    assert_eq!(report["kappa"], 10.0);
    let fields = std::fs::read_to_string(dir.path().join("fields.csv")).unwrap();
    assert_eq!(fields.lines().count(), 1 + 101 * 5);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(code(&run(&["simulate"], "beam", d.path(), &[])), 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn every_shipped_config_verifies() {
    for name in ["beam", "actuator", "openloop", "closedloop"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["verify"], name, dir.path(), &[]);
        assert_eq!(code(&o), 0, "{name}: {}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
        assert!(dir.path().join("verify_report.json").is_file());
    }
}

#[test]
fn seed_flag_reaches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_piezosim"));
    cmd.args(["verify", "--seed", "77", "--config"]).arg(config("beam")).arg("--out").arg(dir.path());
    let o = cmd.output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed 77"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 77);
}

#[test]
fn failed_check_exits_one() {
    // A centroidal actuator has I0_p = 0, which breaks the C_I0 assumption.
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], "actuator", dir.path(), &["model.piezo.z_lower_m=-0.005", "model.piezo.z_upper_m=0.005"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL  assumptions"));
}

#[test]
fn config_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], "does_not_exist", dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("does_not_exist"));

    let o = run(&["simulate"], "beam", dir.path(), &["grid.segments=1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("segments"));

    let o = run(&["simulate"], "beam", dir.path(), &["stepper.dtt=1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dtt"));

    let o = run(&["sweep"], "beam", dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sweep"));
}

#[test]
fn unmet_tolerance_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], "beam", dir.path(), &["stepper.method=adaptive_stiff", "stepper.tol=1e-300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn spectrum_reports_both_loops() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum"], "closedloop", dir.path(), &["grid.segments=4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("loop,re,im"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("zero,")).count(), 24);
    assert_eq!(csv.lines().filter(|l| l.starts_with("voltage_fd,")).count(), 24);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectrum_summary.json")).unwrap()).unwrap();
    assert!(summary["closed_loop"]["ratio"].as_f64().unwrap() <= 1e-8);
    assert!(summary["open_loop"]["paired_conjugates"].as_bool().unwrap());
}

#[test]
fn segment_sweep_aggregates_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], "sweep_segments", dir.path(), &["stepper.t_end_s=0.01", "excitation.duration_s=0.005", "sweep.segments=[3,6]"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "segments,energy_drift,h_ratio,half_life_s");
    assert!(lines[1].starts_with("3,") && lines[2].starts_with("6,"));
    for l in &lines[1..] {
        let drift: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(drift < 1e-9, "{l}");
    }
    assert!(dir.path().join("segments_6/trajectory.csv").is_file());
}

#[test]
fn kappa_sweep_writes_one_report_per_gain() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["sweep"],
        "sweep_kappa",
        dir.path(),
        &["grid.segments=4", "stepper.t_end_s=0.01", "excitation.duration_s=0.005", "sweep.kappa=[1e-9,10]"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("kappa_0.000000001/decay_report.json").is_file());
    assert!(dir.path().join("kappa_10/decay_report.json").is_file());
}

#[test]
fn unknown_subcommand_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_piezosim")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
}
