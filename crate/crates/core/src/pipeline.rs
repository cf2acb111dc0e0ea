//! Config → system → trajectory → fields, as run by the command line.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{decay_metrics, power_balance_residual, DecayReport};
use crate::assembly::{build_system, DiscreteSystem, Grid};
use crate::config::RunConfig;
use crate::control::Controller;
use crate::error::Result;
use crate::integrate::{simulate, simulate_protocol, Trajectory};
use crate::reconstruct::{reconstruct_fields, tip_series, FieldFrame, TipSeries};

pub struct RunOutcome {
    pub sys: DiscreteSystem,
    pub traj: Trajectory,
    pub frames: Vec<FieldFrame>,
    pub tips: TipSeries,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub segments: usize,
    pub controller: String,
    pub kappa: Option<f64>,
    pub excitation_end_s: f64,
    /// Energy history from the end of the excitation on.
    pub decay: DecayReport,
    pub power_balance_residual: f64,
    pub max_energy: f64,
    pub peak_abs_w_tip_m: f64,
}

pub fn build(cfg: &RunConfig) -> Result<DiscreteSystem> {
    build_system(&cfg.spec, &Grid::new(cfg.segments, cfg.spec.length())?)
}

/// Samples at or after `t0`.
pub fn tail(traj: &Trajectory, t0: f64) -> Trajectory {
    let start = traj.times.iter().position(|&t| t >= t0 - 1e-12 * t0.abs().max(1.0)).unwrap_or(traj.len());
    Trajectory {
        times: traj.times[start..].to_vec(),
        states: traj.states[start..].to_vec(),
        inputs: traj.inputs[start..].to_vec(),
        outputs: traj.outputs[start..].to_vec(),
        energies: traj.energies[start..].to_vec(),
        supplied: traj.supplied[start..].to_vec(),
    }
}

pub fn run_config(cfg: &RunConfig) -> Result<RunOutcome> {
    let sys = build(cfg)?;
    let x0 = DVector::zeros(sys.dim);
    let traj = match cfg.excitation {
        Some(pulse) => simulate_protocol(&sys, &pulse, &cfg.controller, &cfg.stepper, &x0)?,
        None => simulate(&sys, &cfg.controller, &cfg.stepper, &x0)?,
    };
    let frames = reconstruct_fields(&traj, &sys)?;
    let tips = tip_series(&frames);
    let switch = cfg.excitation_end();
    let summary = RunSummary {
        segments: cfg.segments,
        controller: cfg.controller.name().to_string(),
        kappa: cfg.controller.kappa(),
        excitation_end_s: switch,
        decay: decay_metrics(&tail(&traj, switch)),
        power_balance_residual: power_balance_residual(&traj),
        max_energy: traj.energies.iter().cloned().fold(0.0, f64::max),
        peak_abs_w_tip_m: tips.peak_abs_w(),
    };
    Ok(RunOutcome {
        sys,
        traj,
        frames,
        tips,
        summary,
    })
}

/// The same run with another feedback gain.
pub fn with_kappa(cfg: &RunConfig, kappa: f64) -> RunConfig {
    RunConfig {
        controller: cfg.controller.with_kappa(kappa),
        ..cfg.clone()
    }
}

pub fn with_segments(cfg: &RunConfig, segments: usize) -> RunConfig {
    RunConfig { segments, ..cfg.clone() }
}

/// The excitation as a schedule on its own (zero without one).
pub fn excitation_or_zero(cfg: &RunConfig) -> Controller {
    cfg.excitation.unwrap_or(Controller::Zero)
}
