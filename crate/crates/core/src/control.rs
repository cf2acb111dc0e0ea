//! Boundary feedback and open-loop schedules.
//!
//! Every feedback law is negative output feedback on the collocated port,
//! `u = −(κ/s²)·y`, so that `dH/dt = −(κ/s²)·y²`. The law-specific scale `s`
//! turns the port output into the quantity the law feeds back:
//!
//! | law              | `y`                        | `s`                      | physical input            |
//! |------------------|----------------------------|--------------------------|---------------------------|
//! | fully dynamic V  | `A_p q̇(tip)`               | `A_p`                    | `V = (κ/A_p) q̇(tip)`      |
//! | (quasi-)static V | `γ A_p v̇(tip)`             | `γ A_p`                  | `V = κ/(γA_p) v̇(tip)`     |
//! | current          | tip charge effort          | `A_p β (1 − γ²β/C_A)`    | `I = −(κ/s²) y`           |
//!
//! Voltage ports use `u = −V`; the current port uses `u = I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{DiscreteSystem, Variant};
use crate::error::{Error, Result};
use crate::linalg::EnergyFactor;

pub const DEFAULT_KAPPA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Controller {
    VoltageFd { kappa: f64 },
    VoltageQs { kappa: f64 },
    CurrentBoundary { kappa: f64 },
    OpenLoopPulse { amplitude: f64, duration: f64 },
    Zero,
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Controller::VoltageFd { kappa }
            | Controller::VoltageQs { kappa }
            | Controller::CurrentBoundary { kappa } => {
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::invalid(
                        "Controller",
                        format!("feedback gain must be positive, got {kappa}"),
                    ));
                }
            }
            Controller::OpenLoopPulse { amplitude, duration } => {
                if !(duration >= 0.0 && duration.is_finite() && amplitude.is_finite()) {
                    return Err(Error::invalid(
                        "Controller",
                        format!("pulse needs a finite amplitude and duration >= 0, got {amplitude}, {duration}"),
                    ));
                }
            }
            Controller::Zero => {}
        }
        Ok(())
    }

    pub fn kappa(&self) -> Option<f64> {
        match *self {
            Controller::VoltageFd { kappa }
            | Controller::VoltageQs { kappa }
            | Controller::CurrentBoundary { kappa } => Some(kappa),
            _ => None,
        }
    }

    pub fn is_feedback(&self) -> bool {
        self.kappa().is_some()
    }

    /// Same law with a different gain. Open-loop controllers are returned
    /// unchanged.
    pub fn with_kappa(&self, kappa: f64) -> Controller {
        match *self {
            Controller::VoltageFd { .. } => Controller::VoltageFd { kappa },
            Controller::VoltageQs { .. } => Controller::VoltageQs { kappa },
            Controller::CurrentBoundary { .. } => Controller::CurrentBoundary { kappa },
            other => other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::VoltageFd { .. } => "voltage_fd",
            Controller::VoltageQs { .. } => "voltage_qs",
            Controller::CurrentBoundary { .. } => "current_boundary",
            Controller::OpenLoopPulse { .. } => "open_loop_pulse",
            Controller::Zero => "zero",
        }
    }

    /// Physical open-loop input at time `t` (zero for feedback laws).
    pub fn schedule(&self, t: f64) -> f64 {
        match *self {
            Controller::OpenLoopPulse { amplitude, duration } if t < duration => amplitude,
            _ => 0.0,
        }
    }

    /// Mean of the open-loop schedule over `[t0, t1]`.
    pub fn schedule_mean(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            Controller::OpenLoopPulse { amplitude, duration } if t1 > t0 => {
                let overlap = (t1.min(duration) - t0).max(0.0);
                amplitude * overlap / (t1 - t0)
            }
            _ => 0.0,
        }
    }
}

/// `u(t) = amplitude` for `t < duration`, else 0.
pub fn open_loop_schedule(amplitude: f64, duration: f64) -> Controller {
    Controller::OpenLoopPulse {
        amplitude,
        duration,
    }
}

fn variant_name(v: Variant) -> String {
    format!("{v:?}")
}

/// Scale `s` of the law on this system, checking the pairing.
pub fn law_scaling(ctl: &Controller, sys: &DiscreteSystem) -> Result<f64> {
    let c = &sys.coefficients;
    let incompatible = || Error::IncompatibleController {
        law: ctl.name().to_string(),
        system: variant_name(sys.variant),
    };
    match (ctl, sys.variant) {
        (Controller::VoltageFd { .. }, Variant::FullyDynamicVoltage | Variant::Beam) => Ok(c.a_p),
        (Controller::VoltageQs { .. }, Variant::QsStaticVoltage(_) | Variant::StaticReduced) => {
            let s = c.gamma * c.a_p;
            if s == 0.0 {
                Err(Error::UndefinedLaw(
                    "quasi-static voltage feedback divides by gamma A_p, which is zero".into(),
                ))
            } else {
                Ok(s)
            }
        }
        (Controller::CurrentBoundary { .. }, Variant::CurrentBoundary) => {
            let s = c.a_p * c.beta * (1.0 - c.coupling() / c.c_a);
            if s == 0.0 {
                Err(Error::UndefinedLaw("current feedback scale vanishes".into()))
            } else {
                Ok(s)
            }
        }
        _ => Err(incompatible()),
    }
}

/// Gain `κ/s²` multiplying `b cᵀ` in the closed loop; zero for open-loop
/// controllers.
pub fn feedback_gain(ctl: &Controller, sys: &DiscreteSystem) -> Result<f64> {
    ctl.validate()?;
    match ctl.kappa() {
        None => Ok(0.0),
        Some(kappa) => {
            let s = law_scaling(ctl, sys)?;
            Ok(kappa / (s * s))
        }
    }
}

/// `a_gen − gain · b cᵀ`.
pub fn closed_loop_matrix(sys: &DiscreteSystem, gain: f64) -> DMatrix<f64> {
    if gain == 0.0 {
        return sys.a_gen.clone();
    }
    &sys.a_gen - (&sys.b_in * sys.c_out.transpose()) * gain
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopSystem {
    pub a_cl: DMatrix<f64>,
    pub base: DiscreteSystem,
    pub controller: Controller,
    /// `κ/s²`.
    pub gain: f64,
}

impl ClosedLoopSystem {
    /// `xᵀQ a_cl x + gain·y(x)²`, which vanishes identically.
    pub fn dissipation_defect(&self, x: &DVector<f64>) -> f64 {
        let qx = &self.base.q_energy * x;
        let y = self.base.output(x);
        qx.dot(&(&self.a_cl * x)) + self.gain * y * y
    }

    /// Port input the feedback produces at state `x`.
    pub fn input(&self, x: &DVector<f64>) -> f64 {
        -self.gain * self.base.output(x)
    }

    pub fn energy_form(&self) -> Result<EnergyForm> {
        EnergyForm::new(&self.base, self.gain)
    }
}

/// Closes the loop with a feedback law, or returns the open-loop generator
/// for `Zero` and pulse controllers.
pub fn close_loop(sys: &DiscreteSystem, ctl: &Controller) -> Result<ClosedLoopSystem> {
    let gain = feedback_gain(ctl, sys)?;
    Ok(ClosedLoopSystem {
        a_cl: closed_loop_matrix(sys, gain),
        base: sys.clone(),
        controller: *ctl,
        gain,
    })
}

/// Port input `u` produced by the controller at state `x` and time `t`.
///
/// For voltage ports the applied voltage is `−u`; see
/// [`physical_input`].
pub fn feedback_signal(ctl: &Controller, sys: &DiscreteSystem, x: &DVector<f64>) -> Result<f64> {
    let gain = feedback_gain(ctl, sys)?;
    Ok(-gain * sys.output(x))
}

/// Volts or amperes corresponding to a port input.
pub fn physical_input(sys: &DiscreteSystem, u: f64) -> f64 {
    sys.port_sign * u
}

/// Port input corresponding to a physical (volt or ampere) input.
pub fn port_input(sys: &DiscreteSystem, physical: f64) -> f64 {
    sys.port_sign * physical
}

/// System written in energy coordinates `ξ = Lᵀx`, `Q = LLᵀ`.
///
/// `a = LᵀJL − gain·β βᵀ` with `β = Lᵀb`; `H = ½|ξ|²` and `y = βᵀξ`.
#[derive(Debug, Clone)]
pub struct EnergyForm {
    pub factor: EnergyFactor,
    pub a: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub gain: f64,
}

impl EnergyForm {
    pub fn new(sys: &DiscreteSystem, gain: f64) -> Result<EnergyForm> {
        let factor = EnergyFactor::new(&sys.q_energy)?;
        let l = factor.l();
        let s = l.transpose() * &sys.structure * l;
        let mut a = (&s - s.transpose()) * 0.5;
        let beta = factor.transform_input(&sys.b_in);
        if gain != 0.0 {
            a -= (&beta * beta.transpose()) * gain;
        }
        Ok(EnergyForm {
            factor,
            a,
            beta,
            gain,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}
