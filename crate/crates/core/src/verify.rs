//! The verification table behind `piezosim verify`.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{dissipativity_probe, power_balance_residual};
use crate::assembly::{
    assemble_beam, assemble_fd_composite, assemble_qs_static_composite, static_elimination_oracle,
    DiscreteSystem, Field, Grid, Variant,
};
use crate::config::RunConfig;
use crate::control::{close_loop, law_scaling, Controller};
use crate::error::Result;
use crate::integrate::{simulate, simulate_protocol, StepperConfig};
use crate::linalg::{relative_difference, submatrix};
use crate::model::{
    derive_cross_section, em_effective_coefficients, validate_assumptions, Actuation,
    CompositeCoefficients, ElectromagneticAssumption, LayerGeometry, ModelKind, ModelSpec,
};

pub const LOSSLESS_TOL: f64 = 1e-12;
pub const DISSIPATION_TOL: f64 = 1e-10;
pub const POWER_BALANCE_TOL: f64 = 1e-6;
pub const DECOUPLING_TOL: f64 = 1e-14;
pub const ORACLE_TOL: f64 = 1e-10;
pub const PROBE_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn measured(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            status: if value <= tolerance { Status::Pass } else { Status::Fail },
            value: Some(value),
            tolerance: Some(tolerance),
            detail: detail.into(),
        }
    }

    fn verdict(name: &str, ok: bool, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            value: None,
            tolerance: None,
            detail: detail.into(),
        }
    }

    fn skip(name: &str, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            status: Status::Skip,
            value: None,
            tolerance: None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub segments: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let measure = match (c.value, c.tolerance) {
                (Some(v), Some(t)) => format!("{v:.3e} (tol {t:.0e})"),
                _ => String::new(),
            };
            out.push_str(&format!("{:<4}  {:<width$}  {:<24} {}\n", c.status, c.name, measure, c.detail));
        }
        out
    }
}

pub fn check_assumptions(c: &CompositeCoefficients, em: ElectromagneticAssumption, current_law: bool) -> Check {
    let report = validate_assumptions(c, em, current_law);
    let flagged: Vec<&str> = report.flagged().map(|f| f.name.as_str()).collect();
    let min_margin = report.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    Check::verdict(
        "assumptions",
        flagged.is_empty(),
        if flagged.is_empty() {
            format!("{} inequalities hold, smallest relative margin {min_margin:.3e}", report.checks.len())
        } else {
            format!("violated: {}", flagged.join("; "))
        },
    )
}

pub fn check_structure(sys: &DiscreteSystem) -> Vec<Check> {
    let r = sys.structure_residuals();
    vec![
        Check::measured("losslessness", r.lossless, LOSSLESS_TOL, "|QA + A'Q|max / max(1, |QA|max)"),
        Check::measured("collocation", r.collocation, 0.0, "c_out - b'Q, exact"),
    ]
}

/// Law/model pairing. `None` when the controller is open loop.
pub fn check_pairing(ctl: &Controller, sys: &DiscreteSystem) -> Option<Check> {
    if !ctl.is_feedback() {
        return None;
    }
    Some(match law_scaling(ctl, sys) {
        Ok(s) => Check::verdict("pairing", true, format!("{} on {:?}, s = {s:.6e}", ctl.name(), sys.variant)),
        Err(e) => Check::verdict("pairing", false, e.to_string()),
    })
}

pub fn check_dissipativity(sys: &DiscreteSystem, ctl: &Controller, seed: u64) -> Result<Check> {
    let cl = close_loop(sys, ctl)?;
    let r = dissipativity_probe(&cl, PROBE_SAMPLES, seed)?;
    let mut c = Check::measured(
        "dissipativity",
        r.max_relative_defect,
        DISSIPATION_TOL,
        format!(
            "{} unit-energy states, seed {seed}, max rate {:.3e}, rates nonpositive: {}",
            r.n_samples, r.max_rate, r.nonpositive
        ),
    );
    if !r.nonpositive {
        c.status = Status::Fail;
    }
    Ok(c)
}

/// Short pulse-then-feedback run from rest.
pub fn check_power_balance(sys: &DiscreteSystem, cfg: &RunConfig, feedback_ok: bool) -> Result<Check> {
    let steps = 400.0;
    let stepper = StepperConfig {
        t_end: steps * cfg.stepper.dt,
        sample_every: 1,
        ..cfg.stepper
    };
    let amplitude = match cfg.excitation {
        Some(Controller::OpenLoopPulse { amplitude, .. }) if amplitude != 0.0 => amplitude,
        _ => 1.0,
    };
    let pulse = Controller::OpenLoopPulse {
        amplitude,
        duration: 0.5 * stepper.t_end,
    };
    let x0 = DVector::zeros(sys.dim);
    let traj = if feedback_ok && cfg.controller.is_feedback() {
        simulate_protocol(sys, &pulse, &cfg.controller, &stepper, &x0)?
    } else {
        simulate(sys, &pulse, &stepper, &x0)?
    };
    let max_h = traj.energies.iter().cloned().fold(0.0, f64::max);
    let res = power_balance_residual(&traj);
    Ok(Check::measured(
        "power balance",
        if max_h > 0.0 { res / max_h } else { res },
        POWER_BALANCE_TOL,
        format!("|H - H0 - int u y| / max H over {} steps", steps as usize),
    ))
}

/// A centroidal actuator made of the piezo layer: bending must decouple and
/// the rest must equal the beam assembly.
pub fn check_centroidal_decoupling(spec: &ModelSpec, grid: &Grid) -> Result<Check> {
    let g = spec.piezo.geometry;
    let half = 0.5 * (g.hb - g.ha);
    let geometry = LayerGeometry {
        ha: -half,
        hb: half,
        ..g
    };
    let cs = derive_cross_section(&geometry)?;
    let m = spec.piezo.material;
    let fd = assemble_fd_composite(&CompositeCoefficients::actuator(&m, &cs)?, grid)?;
    let beam = assemble_beam(&m, &cs, grid)?;
    let bending: Vec<usize> = (0..fd.dim).filter(|&i| matches!(fd.labels[i].field, Field::Wzz | Field::Pw)).collect();
    let rest: Vec<usize> = (0..fd.dim).filter(|i| !bending.contains(i)).collect();
    let coupling = submatrix(&fd.a_gen, &bending, &rest)
        .iter()
        .chain(submatrix(&fd.a_gen, &rest, &bending).iter())
        .chain(bending.iter().map(|&i| &fd.b_in[i]))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let dq = relative_difference(&submatrix(&fd.q_energy, &rest, &rest), &beam.q_energy);
    let da = relative_difference(&submatrix(&fd.a_gen, &rest, &rest), &beam.a_gen);
    let mut c = Check::measured(
        "centroidal decoupling",
        dq.max(da),
        DECOUPLING_TOL,
        format!("bending coupling {coupling:.1e}, stretching/charge vs beam Q {dq:.1e}, A {da:.1e}"),
    );
    if coupling != 0.0 {
        c.status = Status::Fail;
    }
    Ok(c)
}

/// Eliminating the charge of the fully dynamic assembly must reproduce the
/// static assembly's energy and generator.
pub fn check_static_oracle(spec: &ModelSpec, grid: &Grid) -> Result<Check> {
    let c = spec.coefficients()?;
    let fd = assemble_fd_composite(&c, grid)?;
    let oracle = static_elimination_oracle(&fd)?;
    let direct = assemble_qs_static_composite(&em_effective_coefficients(&c, ElectromagneticAssumption::Static)?, grid)?;
    let dq = relative_difference(&oracle.q_energy, &direct.q_energy);
    let da = relative_difference(&oracle.a_gen, &direct.a_gen);
    Ok(Check::measured(
        "static elimination oracle",
        dq.max(da),
        ORACLE_TOL,
        format!("Q {dq:.1e}, A {da:.1e}"),
    ))
}

pub fn verify(cfg: &RunConfig, seed: u64) -> Result<VerificationReport> {
    let spec = &cfg.spec;
    let grid = Grid::new(cfg.segments, spec.length())?;
    let mut checks = Vec::new();

    let current_law = matches!(cfg.controller, Controller::CurrentBoundary { .. });
    if spec.kind == ModelKind::Beam {
        checks.push(Check::skip("assumptions", "stated for actuators and composites"));
    } else {
        checks.push(check_assumptions(&spec.coefficients()?, spec.em, current_law));
    }

    let sys = match crate::assembly::build_system(spec, &grid) {
        Ok(sys) => sys,
        Err(e) => {
            checks.push(Check::verdict("assembly", false, e.to_string()));
            return Ok(VerificationReport { segments: cfg.segments, seed, checks });
        }
    };
    checks.extend(check_structure(&sys));

    let pairing = check_pairing(&cfg.controller, &sys);
    let feedback_ok = pairing.as_ref().map_or(true, |p| p.status == Status::Pass);
    if let Some(p) = pairing {
        checks.push(p);
    }
    let probe_ctl = if feedback_ok { cfg.controller } else { Controller::Zero };
    checks.push(check_dissipativity(&sys, &probe_ctl, seed)?);
    checks.push(check_power_balance(&sys, cfg, feedback_ok)?);

    checks.push(check_centroidal_decoupling(spec, &grid)?);
    if sys.variant != Variant::Beam && spec.actuation == Actuation::Voltage {
        checks.push(check_static_oracle(spec, &grid)?);
    } else {
        checks.push(Check::skip("static elimination oracle", "needs a voltage-driven actuator or composite"));
    }
    Ok(VerificationReport {
        segments: cfg.segments,
        seed,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::Method;

    fn reference_cfg() -> RunConfig {
        RunConfig {
            spec: ModelSpec::reference_composite(),
            segments: 6,
            stepper: StepperConfig {
                dt: 1e-6,
                t_end: 1e-4,
                method: Method::ImplicitMidpoint,
                tol: 1e-8,
                sample_every: 1,
            },
            controller: Controller::VoltageFd { kappa: 10.0 },
            excitation: Some(Controller::OpenLoopPulse { amplitude: 500.0, duration: 2.0 }),
            sweep: None,
            seed: None,
        }
    }

    #[test]
    fn reference_composite_passes_everything() {
        let report = verify(&reference_cfg(), 1).unwrap();
        assert!(report.all_passed(), "{}", report.table());
        assert!(report.checks.iter().all(|c| c.status == Status::Pass), "{}", report.table());
    }

    #[test]
    fn degenerate_mass_fails_assumptions() {
        let mut c = ModelSpec::reference_composite().coefficients().unwrap();
        c.rho_i0 = (c.rho_a * c.rho_i).sqrt();
        let check = check_assumptions(&c, ElectromagneticAssumption::FullyDynamic, false);
        assert_eq!(check.status, Status::Fail);
        assert!(check.detail.contains("rho_A rho_I"));
    }

    #[test]
    fn uncoupled_quasi_static_law_fails_pairing() {
        let mut cfg = reference_cfg();
        cfg.spec.em = ElectromagneticAssumption::QuasiStatic;
        cfg.spec.piezo.material.gamma = 0.0;
        cfg.controller = Controller::VoltageQs { kappa: 10.0 };
        let report = verify(&cfg, 1).unwrap();
        let pairing = report.checks.iter().find(|c| c.name == "pairing").unwrap();
        assert_eq!(pairing.status, Status::Fail);
        assert!(!report.all_passed());
    }

    #[test]
    fn table_lists_every_check() {
        let report = verify(&reference_cfg(), 1).unwrap();
        assert_eq!(report.table().lines().count(), report.checks.len());
    }
}
