//! Physical parameters and the coefficients derived from them.
//!
//! Everything here is a plain value type. The assembly layer consumes
//! [`CompositeCoefficients`]; a bare actuator or beam is a composite without
//! a substrate, so all discretisations share one coefficient set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of one material layer, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Mass density, kg/m³.
    pub rho: f64,
    /// Elastic stiffness at constant field, N/m².
    pub c11: f64,
    /// Piezoelectric coupling, C/m². Zero for a purely mechanical layer.
    pub gamma: f64,
    /// Impermittivity, m/F.
    pub beta: f64,
    /// Magnetic permeability, H/m.
    pub mu: f64,
}

impl MaterialParams {
    /// PZT-5 as used for the reference composite.
    pub const PZT5: MaterialParams = MaterialParams {
        rho: 7950.0,
        c11: 66e9,
        gamma: 12.54,
        beta: 1e-6,
        mu: 1.2e-6,
    };

    /// Steel-304 substrate. Electromagnetic constants only matter for the
    /// positivity checks; the coupling is zero.
    pub const STEEL_304: MaterialParams = MaterialParams {
        rho: 8000.0,
        c11: 193e9,
        gamma: 0.0,
        beta: 1e-6,
        mu: 1.2e-6,
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("c11", self.c11),
            ("beta", self.beta),
            ("mu", self.mu),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    "MaterialParams",
                    format!("{name} must be positive and finite, got {value}"),
                ));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(
                "MaterialParams",
                format!("gamma must be non-negative, got {}", self.gamma),
            ));
        }
        Ok(())
    }
}

/// Rectangular layer occupying `[-gb, gb] x [ha, hb]` in the cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerGeometry {
    /// Half-width, m.
    pub gb: f64,
    /// Lower thickness coordinate, m.
    pub ha: f64,
    /// Upper thickness coordinate, m.
    pub hb: f64,
    /// Beam length, m.
    pub length: f64,
}

impl LayerGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.hb > self.ha) {
            return Err(Error::invalid(
                "LayerGeometry",
                format!("hb ({}) must exceed ha ({})", self.hb, self.ha),
            ));
        }
        if !(self.gb > 0.0 && self.gb.is_finite()) {
            return Err(Error::invalid(
                "LayerGeometry",
                format!("half-width gb must be positive, got {}", self.gb),
            ));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::invalid(
                "LayerGeometry",
                format!("length must be positive, got {}", self.length),
            ));
        }
        Ok(())
    }

    pub fn is_centroidal(&self) -> bool {
        self.hb == -self.ha
    }
}

/// Area and moments of a layer cross-section about `z3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub a: f64,
    pub i: f64,
    pub i0: f64,
}

impl CrossSection {
    /// The empty section, used for "no substrate".
    pub const ZERO: CrossSection = CrossSection {
        a: 0.0,
        i: 0.0,
        i0: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.i > 0.0) {
            return Err(Error::invalid(
                "CrossSection",
                format!("area and second moment must be positive (a={}, i={})", self.a, self.i),
            ));
        }
        Ok(())
    }

    /// Scales area and both moments, e.g. to model a wider layer.
    pub fn scaled(&self, factor: f64) -> CrossSection {
        CrossSection {
            a: self.a * factor,
            i: self.i * factor,
            i0: self.i0 * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectromagneticAssumption {
    FullyDynamic,
    QuasiStatic,
    Static,
}

/// Coefficients of the composite equations.
///
/// `em` records which electromagnetic reduction has been applied: for
/// `Static` the stiffnesses are the reduced (barred) ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeCoefficients {
    pub rho_a: f64,
    pub rho_i: f64,
    pub rho_i0: f64,
    pub c_a: f64,
    pub c_i: f64,
    pub c_i0: f64,
    /// Piezo layer area and first moment.
    pub a_p: f64,
    pub i0_p: f64,
    /// Reinforced stiffness of the piezo layer alone.
    pub c_p: f64,
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub em: ElectromagneticAssumption,
}

impl CompositeCoefficients {
    /// Coefficients of a single piezoelectric actuator.
    ///
    /// The actuator equations carry the reinforced stiffness in every
    /// stiffness term, including the coupling `C I0`.
    pub fn actuator(m: &MaterialParams, cs: &CrossSection) -> Result<Self> {
        m.validate()?;
        cs.validate()?;
        let c = reinforced_stiffness(m);
        Ok(CompositeCoefficients {
            rho_a: m.rho * cs.a,
            rho_i: m.rho * cs.i,
            rho_i0: m.rho * cs.i0,
            c_a: c * cs.a,
            c_i: c * cs.i,
            c_i0: c * cs.i0,
            a_p: cs.a,
            i0_p: cs.i0,
            c_p: c,
            gamma: m.gamma,
            beta: m.beta,
            mu: m.mu,
            em: ElectromagneticAssumption::FullyDynamic,
        })
    }

    /// Static charge-stiffness product `γ²β`.
    pub fn coupling(&self) -> f64 {
        self.gamma * self.gamma * self.beta
    }

    /// Determinant of the mass matrix of the mechanical fields.
    pub fn mass_determinant(&self) -> f64 {
        self.rho_a * self.rho_i - self.rho_i0 * self.rho_i0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_a", self.rho_a),
            ("rho_i", self.rho_i),
            ("c_a", self.c_a),
            ("c_i", self.c_i),
            ("a_p", self.a_p),
            ("beta", self.beta),
            ("mu", self.mu),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    "CompositeCoefficients",
                    format!("{name} must be positive and finite, got {value}"),
                ));
            }
        }
        for (name, value) in [("rho_i0", self.rho_i0), ("c_i0", self.c_i0), ("i0_p", self.i0_p)] {
            if !value.is_finite() {
                return Err(Error::invalid(
                    "CompositeCoefficients",
                    format!("{name} must be finite"),
                ));
            }
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("CompositeCoefficients", "gamma must be non-negative"));
        }
        Ok(())
    }
}

/// `a = 2 gb (hb - ha)`, `i = 2/3 gb (hb³ - ha³)`, `i0 = gb (hb² - ha²)`.
pub fn derive_cross_section(geom: &LayerGeometry) -> Result<CrossSection> {
    geom.validate()?;
    let LayerGeometry { gb, ha, hb, .. } = *geom;
    Ok(CrossSection {
        a: 2.0 * gb * (hb - ha),
        i: 2.0 / 3.0 * gb * (hb.powi(3) - ha.powi(3)),
        i0: gb * (hb * hb - ha * ha),
    })
}

/// `C = c11 + γ²β`.
pub fn reinforced_stiffness(m: &MaterialParams) -> f64 {
    m.c11 + m.gamma * m.gamma * m.beta
}

/// Concatenates a piezo layer with a purely mechanical, centroidal substrate.
///
/// The bending/stretching coupling uses the piezo's unreinforced `c11`, while
/// the area and inertia terms use the reinforced stiffness.
pub fn composite_coefficients(
    piezo: (&MaterialParams, &CrossSection),
    substrate: (&MaterialParams, &CrossSection),
) -> Result<CompositeCoefficients> {
    let (mp, cp) = piezo;
    let (ms, cs) = substrate;
    mp.validate()?;
    cp.validate()?;
    ms.validate()?;
    if ms.gamma != 0.0 {
        return Err(Error::invalid(
            "substrate",
            format!("substrate must be purely mechanical (gamma = 0), got {}", ms.gamma),
        ));
    }
    if !(cs.a >= 0.0 && cs.i >= 0.0) {
        return Err(Error::invalid("substrate", "area and second moment must be non-negative"));
    }
    if cs.i0.abs() > 1e-12 * (cs.a * cs.i).sqrt() {
        return Err(Error::invalid(
            "substrate",
            format!("substrate must be centroidal, got first moment {:e}", cs.i0),
        ));
    }
    let c_p = reinforced_stiffness(mp);
    let c_s = ms.c11;
    Ok(CompositeCoefficients {
        rho_a: mp.rho * cp.a + ms.rho * cs.a,
        rho_i: mp.rho * cp.i + ms.rho * cs.i,
        rho_i0: mp.rho * cp.i0,
        c_a: c_p * cp.a + c_s * cs.a,
        c_i: c_p * cp.i + c_s * cs.i,
        c_i0: mp.c11 * cp.i0,
        a_p: cp.a,
        i0_p: cp.i0,
        c_p,
        gamma: mp.gamma,
        beta: mp.beta,
        mu: mp.mu,
        em: ElectromagneticAssumption::FullyDynamic,
    })
}

/// Stiffnesses under the chosen electromagnetic assumption.
///
/// The quasi-static field keeps the reinforced stiffness; the static field
/// subtracts the charge contribution.
pub fn em_effective_coefficients(
    c: &CompositeCoefficients,
    em: ElectromagneticAssumption,
) -> Result<CompositeCoefficients> {
    let mut out = *c;
    out.em = em;
    if em != ElectromagneticAssumption::Static {
        return Ok(out);
    }
    let g = c.coupling();
    out.c_a = c.c_a - g * c.a_p;
    out.c_i = c.c_i - g * c.i0_p * c.i0_p / c.a_p;
    out.c_i0 = c.c_i0 - g * c.i0_p;
    if !(out.c_a > 0.0 && out.c_i > 0.0) {
        return Err(Error::invalid(
            "static coefficients",
            format!(
                "reduced stiffness not positive (C_A = {:e}, C_I = {:e})",
                out.c_a, out.c_i
            ),
        ));
    }
    if !(out.c_a * out.c_i > out.c_i0 * out.c_i0) {
        return Err(Error::invalid(
            "static coefficients",
            "reduced stiffness matrix is not positive definite",
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Beam,
    Actuator,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuation {
    Voltage,
    CurrentThroughBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub material: MaterialParams,
    pub geometry: LayerGeometry,
}

impl Layer {
    pub fn cross_section(&self) -> Result<CrossSection> {
        derive_cross_section(&self.geometry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub em: ElectromagneticAssumption,
    pub piezo: Layer,
    pub substrate: Option<Layer>,
    pub actuation: Actuation,
}

impl ModelSpec {
    /// The reference composite: PZT-5 on a centroidal steel layer of the same
    /// size, 0.1 m wide, 0.01 m thick, 1 m long.
    pub fn reference_composite() -> ModelSpec {
        let geometry = |ha: f64, hb: f64| LayerGeometry {
            gb: 0.05,
            ha,
            hb,
            length: 1.0,
        };
        ModelSpec {
            kind: ModelKind::Composite,
            em: ElectromagneticAssumption::FullyDynamic,
            piezo: Layer {
                material: MaterialParams::PZT5,
                geometry: geometry(0.005, 0.015),
            },
            substrate: Some(Layer {
                material: MaterialParams::STEEL_304,
                geometry: geometry(-0.005, 0.005),
            }),
            actuation: Actuation::Voltage,
        }
    }

    pub fn length(&self) -> f64 {
        self.piezo.geometry.length
    }

    pub fn validate(&self) -> Result<()> {
        self.piezo.material.validate()?;
        self.piezo.geometry.validate()?;
        match (self.kind, &self.substrate) {
            (ModelKind::Composite, None) => {
                return Err(Error::UnsupportedModel("a composite requires a substrate".into()))
            }
            (ModelKind::Composite, Some(s)) => {
                s.material.validate()?;
                s.geometry.validate()?;
                if s.geometry.length != self.piezo.geometry.length {
                    return Err(Error::invalid(
                        "LayerGeometry",
                        "substrate and piezo layer lengths differ",
                    ));
                }
            }
            (_, Some(_)) => {
                return Err(Error::UnsupportedModel(format!(
                    "{:?} does not take a substrate",
                    self.kind
                )))
            }
            (_, None) => {}
        }
        if self.kind == ModelKind::Beam && !self.piezo.geometry.is_centroidal() {
            return Err(Error::UnsupportedModel(
                "a beam requires centroidal piezo geometry (hb = -ha)".into(),
            ));
        }
        if self.actuation == Actuation::CurrentThroughBoundary {
            if self.em != ElectromagneticAssumption::FullyDynamic {
                return Err(Error::UnsupportedModel(
                    "current-through-the-boundary actuation requires a fully dynamic field".into(),
                ));
            }
            if self.kind == ModelKind::Beam {
                return Err(Error::UnsupportedModel(
                    "current-through-the-boundary actuation is defined for actuators and composites"
                        .into(),
                ));
            }
        }
        if self.kind == ModelKind::Beam && self.em != ElectromagneticAssumption::FullyDynamic {
            return Err(Error::UnsupportedModel(
                "beams are assembled with a fully dynamic field only".into(),
            ));
        }
        Ok(())
    }

    /// Unreduced coefficients for this model.
    pub fn coefficients(&self) -> Result<CompositeCoefficients> {
        self.validate()?;
        let cp = self.piezo.cross_section()?;
        match (self.kind, &self.substrate) {
            (ModelKind::Composite, Some(s)) => {
                let cs = s.cross_section()?;
                composite_coefficients((&self.piezo.material, &cp), (&s.material, &cs))
            }
            _ => CompositeCoefficients::actuator(&self.piezo.material, &cp),
        }
    }

    /// Coefficients after the electromagnetic reduction of `self.em`.
    pub fn effective_coefficients(&self) -> Result<CompositeCoefficients> {
        em_effective_coefficients(&self.coefficients()?, self.em)
    }
}

/// One `lhs ≠ rhs` hypothesis with its relative margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, zero when both vanish.
    pub margin: f64,
    /// True when the margin is below the flag tolerance.
    pub flagged: bool,
}

impl InequalityCheck {
    fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs());
        let gap = (lhs - rhs).abs();
        let margin = if scale > 0.0 { gap / scale } else { 0.0 };
        InequalityCheck {
            name: name.into(),
            lhs,
            rhs,
            margin,
            flagged: gap <= ASSUMPTION_FLAG_TOL * scale,
        }
    }
}

pub const ASSUMPTION_FLAG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub em: ElectromagneticAssumption,
    pub checks: Vec<InequalityCheck>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| !c.flagged)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &InequalityCheck> {
        self.checks.iter().filter(|c| c.flagged)
    }
}

/// Evaluates the parameter inequalities behind the stabilisation results.
///
/// `c` is the unreduced coefficient set; the (quasi-)static checks apply the
/// reduction themselves. Pass `current_law = true` to add the extra
/// hypothesis of the current-through-the-boundary law.
pub fn validate_assumptions(
    c: &CompositeCoefficients,
    em: ElectromagneticAssumption,
    current_law: bool,
) -> AssumptionReport {
    let g = c.coupling();
    let mut checks = vec![InequalityCheck::new(
        "rho_A rho_I != rho_I0^2",
        c.rho_a * c.rho_i,
        c.rho_i0 * c.rho_i0,
    )];
    match em {
        ElectromagneticAssumption::FullyDynamic => {
            let i0_sq_over_a = if c.a_p > 0.0 { c.i0_p * c.i0_p / c.a_p } else { 0.0 };
            checks.extend([
                InequalityCheck::new("C_A C_I != C_I0^2", c.c_a * c.c_i, c.c_i0 * c.c_i0),
                InequalityCheck::new("C_A != g^2 b A_p", c.c_a, g * c.a_p),
                InequalityCheck::new("C_I != g^2 b I0_p^2 / A_p", c.c_i, g * i0_sq_over_a),
                InequalityCheck::new("C_I0 != g^2 b A_p", c.c_i0, g * c.a_p),
                InequalityCheck::new("C_I0 != 1 g^2 b I0_p", c.c_i0, g * c.i0_p),
                InequalityCheck::new("C_I0 != 2 g^2 b I0_p", c.c_i0, 2.0 * g * c.i0_p),
            ]);
        }
        ElectromagneticAssumption::QuasiStatic | ElectromagneticAssumption::Static => {
            let (ca, ci, ci0) = barred_stiffness(c, em);
            checks.push(InequalityCheck::new(
                "barC_A barC_I != barC_I0^2",
                ca * ci,
                ci0 * ci0,
            ));
        }
    }
    if current_law {
        checks.push(InequalityCheck::new("C != g^2 b", c.c_p, g));
    }
    AssumptionReport { em, checks }
}

// Unchecked version of the reduction so the report never errors.
fn barred_stiffness(c: &CompositeCoefficients, em: ElectromagneticAssumption) -> (f64, f64, f64) {
    if em != ElectromagneticAssumption::Static || c.em == ElectromagneticAssumption::Static {
        return (c.c_a, c.c_i, c.c_i0);
    }
    let g = c.coupling();
    let i0_sq_over_a = if c.a_p > 0.0 { c.i0_p * c.i0_p / c.a_p } else { 0.0 };
    (c.c_a - g * c.a_p, c.c_i - g * i0_sq_over_a, c.c_i0 - g * c.i0_p)
}
