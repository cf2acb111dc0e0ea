use std::path::{Path, PathBuf};

use piezosim::assembly::Field;
use piezosim::config::{load_model_config, load_model_config_with, Sweep};
use piezosim::output::read_trajectory_csv;
use piezosim::pipeline::{run_config, with_kappa, with_segments};
use piezosim::reconstruct::{reconstruct_fields, time_integrated_tip};
use piezosim::{Controller, ModelKind};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

/// Layer integrals of a rectangle of width `w` between heights `lo` and `hi`.
fn moments(w: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    (w * (hi - lo), w * (hi * hi - lo * lo) / 2.0, w * (hi.powi(3) - lo.powi(3)) / 3.0)
}

#[test]
fn shipped_composite_has_the_reference_coefficients() {
    let cfg = load_model_config(&shipped("closedloop")).unwrap();
    assert_eq!(cfg.spec.kind, ModelKind::Composite);
    let c = cfg.spec.coefficients().unwrap();

    let (ap, i0p, ip) = moments(0.1, 0.005, 0.015);
    let (as_, i0s, is) = moments(0.1, -0.005, 0.005);
    assert!(close(c.a_p, 1e-3, 1e-12));
    assert!(close(c.i0_p, 1e-5, 1e-12));
    assert!(close(ip, 1.0833333333333333e-7, 1e-12));
    assert_eq!(i0s, 0.0);

    assert!(close(c.rho_a, 7950.0 * ap + 8000.0 * as_, 1e-12));
    assert!(close(c.rho_a, 15.95, 1e-12));
    assert!(close(c.rho_i, 7950.0 * ip + 8000.0 * is, 1e-12));
    assert!(close(c.rho_i0, 7950.0 * i0p, 1e-12));
    // Area and inertia terms carry the reinforced stiffness c11 + gamma^2 beta.
    let reinforced = 66e9 + 12.54 * 12.54 * 1e-6;
    assert_eq!(c.c_p, reinforced);
    assert!(close(c.c_a, reinforced * ap + 193e9 * as_, 1e-14));
    assert!(close(c.c_a, 2.59e8, 1e-12));
    assert!(close(c.c_i, reinforced * ip + 193e9 * is, 1e-14));
    assert!((c.c_i - 8758.33).abs() < 0.01);
    assert!(close(c.c_i0, 66e9 * i0p, 1e-14));
    assert_eq!((c.gamma, c.beta, c.mu), (12.54, 1e-6, 1.2e-6));
}

#[test]
fn shipped_configs_all_load() {
    for name in ["beam", "actuator", "openloop", "closedloop", "sweep_kappa", "sweep_segments"] {
        load_model_config(&shipped(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let k = load_model_config(&shipped("sweep_kappa")).unwrap();
    assert!(matches!(k.sweep, Some(Sweep::Kappa(_))));
    let n = load_model_config(&shipped("sweep_segments")).unwrap();
    assert!(matches!(n.sweep, Some(Sweep::Segments(_))));
}

#[test]
fn short_run_conserves_power_and_reaches_the_tip() {
    let cfg = load_model_config_with(
        &shipped("closedloop"),
        &["grid.segments=6".into(), "stepper.t_end_s=0.02".into(), "stepper.sample_every=1".into(), "excitation.duration_s=0.01".into()],
    )
    .unwrap();
    let run = run_config(&cfg).unwrap();
    assert_eq!(run.traj.len(), 201);
    assert_eq!(run.frames.len(), run.traj.len());
    assert!(run.summary.power_balance_residual <= 1e-6 * run.summary.max_energy);
    assert!(run.summary.peak_abs_w_tip_m > 0.0);
    assert_eq!(run.summary.kappa, Some(10.0));
    assert_eq!(run.summary.excitation_end_s, 0.01);
    // Starts from rest.
    assert_eq!(run.traj.energies[0], 0.0);
    assert!(run.summary.decay.h0 > 0.0);
}

#[test]
fn tip_stretch_from_time_integration_matches_the_spatial_sum() {
    let cfg = load_model_config_with(
        &shipped("openloop"),
        &["grid.segments=8".into(), "stepper.t_end_s=0.05".into(), "stepper.sample_every=1".into(), "excitation.duration_s=0.02".into()],
    )
    .unwrap();
    let run = run_config(&cfg).unwrap();
    let frames = reconstruct_fields(&run.traj, &run.sys).unwrap();
    let integrated = time_integrated_tip(&run.traj, &run.sys, Field::Pv, 0.0).unwrap();
    let scale = frames.iter().map(|f| f.v_tip().abs()).fold(0.0, f64::max);
    assert!(scale > 0.0);
    for (f, v) in frames.iter().zip(&integrated) {
        assert!((f.v_tip() - v).abs() <= 1e-9 * scale, "{} vs {v}", f.v_tip());
    }
}

#[test]
fn variations_change_only_their_field() {
    let cfg = load_model_config(&shipped("closedloop")).unwrap();
    let k = with_kappa(&cfg, 3.0);
    assert_eq!(k.controller, Controller::VoltageFd { kappa: 3.0 });
    assert_eq!((k.segments, k.stepper, k.excitation), (cfg.segments, cfg.stepper, cfg.excitation));
    let n = with_segments(&cfg, 7);
    assert_eq!((n.segments, n.controller), (7, cfg.controller));
}

#[test]
fn written_trajectory_reads_back() {
    let cfg = load_model_config_with(
        &shipped("beam"),
        &["grid.segments=4".into(), "stepper.t_end_s=1e-4".into(), "stepper.sample_every=1".into()],
    )
    .unwrap();
    let run = run_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    piezosim::output::write_trajectory_csv(&run.traj, &run.frames, &p).unwrap();
    let rows = read_trajectory_csv(&p).unwrap();
    assert_eq!(rows.len(), run.traj.len());
    for (r, (h, u)) in rows.iter().zip(run.traj.energies.iter().zip(&run.traj.inputs)) {
        assert_eq!((r.h, r.u), (*h, *u));
    }
}
