//! JSON run configurations.
//!
//! Every physical key carries its SI unit in the name. Unknown keys are
//! rejected, and `key=value` overrides address fields by dotted path
//! (`stepper.dt_s=1e-4`, `model.piezo.gamma_c_per_m2=0`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::integrate::{Method, StepperConfig};
use crate::model::{
    Actuation, ElectromagneticAssumption, Layer, LayerGeometry, MaterialParams, ModelKind, ModelSpec,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad override `{spec}`: {reason}")]
    Override { spec: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub rho_kg_per_m3: f64,
    pub c11_n_per_m2: f64,
    pub gamma_c_per_m2: f64,
    pub beta_m_per_f: f64,
    pub mu_h_per_m: f64,
    pub half_width_m: f64,
    pub z_lower_m: f64,
    pub z_upper_m: f64,
    pub length_m: f64,
}

impl From<LayerSection> for Layer {
    fn from(s: LayerSection) -> Layer {
        Layer {
            material: MaterialParams {
                rho: s.rho_kg_per_m3,
                c11: s.c11_n_per_m2,
                gamma: s.gamma_c_per_m2,
                beta: s.beta_m_per_f,
                mu: s.mu_h_per_m,
            },
            geometry: LayerGeometry {
                gb: s.half_width_m,
                ha: s.z_lower_m,
                hb: s.z_upper_m,
                length: s.length_m,
            },
        }
    }
}

impl From<Layer> for LayerSection {
    fn from(l: Layer) -> LayerSection {
        LayerSection {
            rho_kg_per_m3: l.material.rho,
            c11_n_per_m2: l.material.c11,
            gamma_c_per_m2: l.material.gamma,
            beta_m_per_f: l.material.beta,
            mu_h_per_m: l.material.mu,
            half_width_m: l.geometry.gb,
            z_lower_m: l.geometry.ha,
            z_upper_m: l.geometry.hb,
            length_m: l.geometry.length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub electromagnetic: ElectromagneticAssumption,
    pub actuation: Actuation,
    pub piezo: LayerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substrate: Option<LayerSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub segments: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_sample_every() -> usize {
    1
}

fn default_method() -> Method {
    Method::ImplicitMidpoint
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub dt_s: f64,
    pub t_end_s: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
}

/// Feedback law or open-loop input applied after the excitation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSection {
    VoltageFd { kappa: f64 },
    VoltageQs { kappa: f64 },
    CurrentBoundary { kappa: f64 },
    Zero,
}

/// Constant input on `[0, duration_s)`: volts for voltage actuation,
/// amperes for current actuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_a: Option<f64>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub grid: GridSection,
    pub stepper: StepperSection,
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<ExcitationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Kappa(Vec<f64>),
    Segments(Vec<usize>),
}

/// A validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub segments: usize,
    pub stepper: StepperConfig,
    /// Law active after the excitation (or throughout, without one).
    pub controller: Controller,
    /// Open-loop pulse applied first, if any.
    pub excitation: Option<Controller>,
    pub sweep: Option<Sweep>,
    pub seed: Option<u64>,
}

pub const DEFAULT_SEED: u64 = 0x5eed;

impl RunConfig {
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Pulse end time, zero without an excitation.
    pub fn excitation_end(&self) -> f64 {
        match self.excitation {
            Some(Controller::OpenLoopPulse { duration, .. }) => duration,
            _ => 0.0,
        }
    }
}

impl ConfigFile {
    pub fn into_run_config(self, path: &Path) -> Result<RunConfig> {
        let schema = |message: String| {
            Error::Config(ConfigError::Schema {
                path: path.to_path_buf(),
                message,
            })
        };
        let m = self.model;
        let spec = ModelSpec {
            kind: m.kind,
            em: m.electromagnetic,
            piezo: m.piezo.into(),
            substrate: m.substrate.map(Layer::from),
            actuation: m.actuation,
        };
        spec.validate()?;

        let stepper = StepperConfig {
            dt: self.stepper.dt_s,
            t_end: self.stepper.t_end_s,
            method: self.stepper.method,
            tol: self.stepper.tol,
            sample_every: self.stepper.sample_every,
        };
        stepper.validate()?;

        if self.grid.segments < 2 {
            return Err(schema(format!("grid.segments must be at least 2, got {}", self.grid.segments)));
        }

        let controller = match self.controller {
            ControllerSection::VoltageFd { kappa } => Controller::VoltageFd { kappa },
            ControllerSection::VoltageQs { kappa } => Controller::VoltageQs { kappa },
            ControllerSection::CurrentBoundary { kappa } => Controller::CurrentBoundary { kappa },
            ControllerSection::Zero => Controller::Zero,
        };
        controller.validate()?;

        let excitation = match self.excitation {
            None => None,
            Some(e) => {
                let amplitude = match (spec.actuation, e.amplitude_v, e.amplitude_a) {
                    (Actuation::Voltage, Some(v), None) => v,
                    (Actuation::CurrentThroughBoundary, None, Some(a)) => a,
                    (Actuation::Voltage, _, _) => {
                        return Err(schema("excitation for voltage actuation takes exactly `amplitude_v`".into()))
                    }
                    (Actuation::CurrentThroughBoundary, _, _) => {
                        return Err(schema("excitation for current actuation takes exactly `amplitude_a`".into()))
                    }
                };
                let pulse = Controller::OpenLoopPulse {
                    amplitude,
                    duration: e.duration_s,
                };
                pulse.validate()?;
                Some(pulse)
            }
        };

        let sweep = match self.sweep {
            None => None,
            Some(SweepSection { kappa: Some(k), segments: None }) => {
                if k.is_empty() {
                    return Err(schema("sweep.kappa must not be empty".into()));
                }
                if !controller.is_feedback() {
                    return Err(schema("sweep.kappa requires a feedback controller".into()));
                }
                Some(Sweep::Kappa(k))
            }
            Some(SweepSection { kappa: None, segments: Some(n) }) => {
                if n.is_empty() {
                    return Err(schema("sweep.segments must not be empty".into()));
                }
                if let Some(bad) = n.iter().find(|&&n| n < 2) {
                    return Err(schema(format!("sweep.segments entries must be at least 2, got {bad}")));
                }
                Some(Sweep::Segments(n))
            }
            Some(_) => return Err(schema("sweep takes exactly one of `kappa` or `segments`".into())),
        };

        Ok(RunConfig {
            spec,
            segments: self.grid.segments,
            stepper,
            controller,
            excitation,
            sweep,
            seed: self.seed,
        })
    }
}

fn classify(path: &Path, e: serde_json::Error) -> ConfigError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => ConfigError::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
        Category::Io => ConfigError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        },
        Category::Syntax | Category::Eof => ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    }
}

/// Sets `path` (dotted) in `doc` to `value`, parsed as JSON when possible
/// and as a bare string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::Override {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad("empty key segment"));
    }
    let value = serde_json::from_str::<Value>(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| bad(&format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

/// Parses configuration text. `path` is used for messages only.
pub fn parse_config(text: &str, path: &Path, overrides: &[String]) -> Result<RunConfig> {
    if text.trim().is_empty() {
        return Err(ConfigError::Schema {
            path: path.to_path_buf(),
            message: "empty configuration; expected an object with `model`, `grid`, `stepper` and `controller`".into(),
        }
        .into());
    }
    let file: ConfigFile = if overrides.is_empty() {
        serde_json::from_str(text).map_err(|e| classify(path, e))?
    } else {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| classify(path, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        serde_json::from_value(doc).map_err(|e| ConfigError::Schema {
            path: path.to_path_buf(),
            message: format!("{e} (after overrides)"),
        })?
    };
    file.into_run_config(path)
}

pub fn load_model_config(path: &Path) -> Result<RunConfig> {
    load_model_config_with(path, &[])
}

pub fn load_model_config_with(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path, overrides)
}
