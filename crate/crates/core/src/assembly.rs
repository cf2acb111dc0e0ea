//! Staggered-grid discretisation with an exact discrete energy balance.
//!
//! Strains live on the `n` cells of a uniform grid, momenta on the nodes.
//! For a field clamped at `z = 0` the momentum nodes are `1..=n`, the tip
//! node carrying half a cell of weight; the field of the current-driven
//! charge line is staggered the other way round (nodes `0..n`, the root node
//! half-weighted) because its flow is prescribed at the tip.
//!
//! With `Q` the block-diagonal energy matrix (cell stiffness times `dz`, node
//! compliance times node weight) the generator is `A = J Q` with `J`
//! skew-symmetric, so `QA + AᵀQ = 0` holds to rounding. The output map is
//! `c = bᵀQ`, which gives `dH/dt = u·y` along every trajectory.
//!
//! State layout is field-major: every strain field's `n` cells in field
//! order, then every momentum field's `n` nodes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalised_min_eigenvalue, submatrix};
use crate::model::{
    reinforced_stiffness, Actuation, CompositeCoefficients, CrossSection,
    ElectromagneticAssumption, MaterialParams, ModelKind, ModelSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
    pub dz: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Grid> {
        if n < 2 {
            return Err(Error::invalid("Grid", format!("need at least 2 segments, got {n}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid("Grid", format!("length must be positive, got {length}")));
        }
        Ok(Grid {
            n,
            length,
            dz: length / n as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("Grid", format!("need at least 2 segments, got {}", self.n)));
        }
        if !(self.length > 0.0 && (self.dz * self.n as f64 - self.length).abs() <= 1e-12 * self.length) {
            return Err(Error::invalid("Grid", "dz * n must equal the length"));
        }
        Ok(())
    }

    pub fn unit(n: usize) -> Result<Grid> {
        Grid::new(n, 1.0)
    }

    pub fn cell_midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dz
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.n {
            self.length
        } else {
            k as f64 * self.dz
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    /// Longitudinal strain `v_z`.
    Vz,
    /// Curvature `w_zz`.
    Wzz,
    /// Charge gradient `q_z`.
    Qz,
    /// Momentum conjugate to `v`.
    Pv,
    /// Momentum conjugate to `w_z`.
    Pw,
    /// Magnetic momentum `μ A_p q̇`.
    Pq,
}

impl Field {
    pub fn is_strain(self) -> bool {
        matches!(self, Field::Vz | Field::Wzz | Field::Qz)
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Vz => "v_z",
            Field::Wzz => "w_zz",
            Field::Qz => "q_z",
            Field::Pv => "p_v",
            Field::Pw => "p_w",
            Field::Pq => "p_q",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid position of one state entry. `index` is the cell for strains and
/// the node for momenta; `z` is the corresponding coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateLabel {
    pub field: Field,
    pub index: usize,
    pub z: f64,
}

/// Which discretisation produced a system; decides the admissible feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Fully dynamic field, voltage at the tip. Actuators and composites.
    FullyDynamicVoltage,
    /// Stretching/charge beam with voltage at the tip.
    Beam,
    /// Mechanical-only (quasi-)static composite with voltage strain injection.
    QsStaticVoltage(ElectromagneticAssumption),
    /// Fully dynamic field, charge rate prescribed at the tip.
    CurrentBoundary,
    /// Produced by eliminating the charge states of a fully dynamic system.
    StaticReduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSystem {
    pub dim: usize,
    /// Symmetric, `H(x) = ½ xᵀ Q x`.
    pub q_energy: DMatrix<f64>,
    /// Skew-symmetric interconnection, `a_gen = structure · q_energy`.
    pub structure: DMatrix<f64>,
    pub a_gen: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Output row stored as a column: `y = c_out · x`.
    pub c_out: DVector<f64>,
    pub labels: Vec<StateLabel>,
    pub grid: Grid,
    pub variant: Variant,
    /// Coefficients the matrices were built from (reduced ones for
    /// (quasi-)static systems).
    pub coefficients: CompositeCoefficients,
    /// Physical input (volt or ampere) per unit of `u`.
    pub port_sign: f64,
    /// Present when built through [`build_system`].
    pub spec: Option<ModelSpec>,
}

impl DiscreteSystem {
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_energy * x))
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.c_out.dot(x)
    }

    pub fn indices_of(&self, field: Field) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.field == field)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_field(&self, field: Field) -> bool {
        self.labels.iter().any(|l| l.field == field)
    }

    /// Index of the momentum entry at the last node of a field.
    pub fn tip_index(&self, field: Field) -> Option<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.field == field)
            .max_by_key(|(_, l)| l.index)
            .map(|(i, _)| i)
    }

    /// Velocity-like flow `M⁻¹p` at the tip node for a momentum field.
    pub fn tip_velocity(&self, field: Field, x: &DVector<f64>) -> Option<f64> {
        let idx = self.tip_index(field)?;
        let label = self.labels[idx];
        if label.z != self.grid.length {
            return None;
        }
        let w = node_weight_tip(&self.grid);
        Some((&self.q_energy.row(idx) * x)[0] / w)
    }

    /// Losslessness, collocation and symmetry defects of the matrices.
    pub fn structure_residuals(&self) -> StructureResiduals {
        let lossless = crate::linalg::lossless_residual(&self.q_energy, &self.a_gen);
        let colloc = &self.c_out - self.q_energy.tr_mul(&self.b_in);
        let symmetry = crate::linalg::max_abs(&(&self.q_energy - self.q_energy.transpose()));
        StructureResiduals {
            lossless,
            collocation: crate::linalg::max_abs_vec(&colloc),
            symmetry,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureResiduals {
    pub lossless: f64,
    pub collocation: f64,
    pub symmetry: f64,
}

fn node_weight_tip(grid: &Grid) -> f64 {
    0.5 * grid.dz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stagger {
    /// Zero flow at `z = 0`, momentum nodes `1..=n`.
    ClampedRoot,
    /// Zero effort at `z = 0`, momentum nodes `0..n`; tip flow is the input.
    FreeRoot,
}

impl Stagger {
    fn node(self, slot: usize) -> usize {
        match self {
            Stagger::ClampedRoot => slot + 1,
            Stagger::FreeRoot => slot,
        }
    }

    fn weight(self, slot: usize, grid: &Grid) -> f64 {
        let node = self.node(slot);
        if node == 0 || node == grid.n {
            0.5 * grid.dz
        } else {
            grid.dz
        }
    }
}

enum Port {
    /// Effort (force) applied at the tip node of each field, weighted by `g`.
    TipEffort(Vec<f64>),
    /// Flow prescribed at the tip of one free-root field.
    TipFlow(usize),
}

struct Layout {
    strains: Vec<Field>,
    momenta: Vec<Field>,
    stagger: Vec<Stagger>,
    /// Cell stiffness per unit length.
    stiffness: DMatrix<f64>,
    /// Inverse mass per unit length.
    compliance: DMatrix<f64>,
}

impl Layout {
    fn strain(&self, a: usize, j: usize, n: usize) -> usize {
        a * n + j
    }

    fn momentum(&self, a: usize, slot: usize, n: usize) -> usize {
        (self.strains.len() + a) * n + slot
    }
}

fn assemble(layout: &Layout, grid: &Grid, port: Port) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, Vec<StateLabel>) {
    let n = grid.n;
    let nf = layout.strains.len();
    let dim = 2 * nf * n;
    let dz = grid.dz;
    let mut q = DMatrix::zeros(dim, dim);
    let mut j_mat = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);

    for cell in 0..n {
        for a in 0..nf {
            for c in 0..nf {
                let v = dz * layout.stiffness[(a, c)];
                if v != 0.0 {
                    q[(layout.strain(a, cell, n), layout.strain(c, cell, n))] = v;
                }
            }
        }
    }
    for a in 0..nf {
        for c in 0..nf {
            let m = layout.compliance[(a, c)];
            if m == 0.0 {
                continue;
            }
            assert_eq!(
                layout.stagger[a], layout.stagger[c],
                "mass coupling between differently staggered fields"
            );
            for slot in 0..n {
                let w = layout.stagger[a].weight(slot, grid);
                q[(layout.momentum(a, slot, n), layout.momentum(c, slot, n))] = w * m;
            }
        }
    }

    // ė_j = (f_{j+1} − f_j)/dz with f = (Qx)_p / w at each node.
    for a in 0..nf {
        let st = layout.stagger[a];
        for slot in 0..n {
            let node = st.node(slot);
            let w = st.weight(slot, grid);
            let p = layout.momentum(a, slot, n);
            // Node `node` sits at the right end of cell node−1 and the left
            // end of cell node.
            if node >= 1 {
                let e = layout.strain(a, node - 1, n);
                j_mat[(e, p)] += 1.0 / (dz * w);
                j_mat[(p, e)] -= 1.0 / (dz * w);
            }
            if node < n {
                let e = layout.strain(a, node, n);
                j_mat[(e, p)] -= 1.0 / (dz * w);
                j_mat[(p, e)] += 1.0 / (dz * w);
            }
        }
    }

    match port {
        Port::TipEffort(g) => {
            for (a, &ga) in g.iter().enumerate() {
                if ga != 0.0 {
                    let st = layout.stagger[a];
                    assert_eq!(st, Stagger::ClampedRoot);
                    b[layout.momentum(a, n - 1, n)] = ga / st.weight(n - 1, grid);
                }
            }
        }
        Port::TipFlow(a) => {
            assert_eq!(layout.stagger[a], Stagger::FreeRoot);
            b[layout.strain(a, n - 1, n)] = 1.0 / dz;
        }
    }

    let mut labels = Vec::with_capacity(dim);
    for &field in &layout.strains {
        for cell in 0..n {
            labels.push(StateLabel {
                field,
                index: cell,
                z: grid.cell_midpoint(cell),
            });
        }
    }
    for (a, &field) in layout.momenta.iter().enumerate() {
        for slot in 0..n {
            let node = layout.stagger[a].node(slot);
            labels.push(StateLabel {
                field,
                index: node,
                z: grid.node(node),
            });
        }
    }
    (q, j_mat, b, labels)
}

fn check_definite(what: &str, m: &DMatrix<f64>) -> Result<()> {
    let margin = normalised_min_eigenvalue(m);
    if margin > 1e-14 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            margin,
        })
    }
}

fn mechanical_mass(c: &CompositeCoefficients) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[c.rho_a, -c.rho_i0, -c.rho_i0, c.rho_i])
}

fn inverse(what: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_definite(what, m)?;
    // Cholesky keeps the inverse exactly symmetric up to rounding.
    let inv = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: what.to_string(),
            margin: 0.0,
        })?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn finish(
    q: DMatrix<f64>,
    structure: DMatrix<f64>,
    b: DVector<f64>,
    labels: Vec<StateLabel>,
    grid: Grid,
    variant: Variant,
    coefficients: CompositeCoefficients,
    port_sign: f64,
) -> DiscreteSystem {
    let a_gen = &structure * &q;
    let c_out = q.tr_mul(&b);
    DiscreteSystem {
        dim: q.nrows(),
        q_energy: q,
        structure,
        a_gen,
        b_in: b,
        c_out,
        labels,
        grid,
        variant,
        coefficients,
        port_sign,
        spec: None,
    }
}

fn fd_stiffness(c: &CompositeCoefficients) -> DMatrix<f64> {
    let gb = c.gamma * c.beta;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            c.c_a,
            -c.c_i0,
            -gb * c.a_p,
            -c.c_i0,
            c.c_i,
            gb * c.i0_p,
            -gb * c.a_p,
            gb * c.i0_p,
            c.beta * c.a_p,
        ],
    )
}

fn fd_compliance(c: &CompositeCoefficients) -> Result<DMatrix<f64>> {
    let mech = inverse("mass matrix (rho_A rho_I - rho_I0^2)", &mechanical_mass(c))?;
    let mut m = DMatrix::zeros(3, 3);
    m.view_mut((0, 0), (2, 2)).copy_from(&mech);
    m[(2, 2)] = 1.0 / (c.mu * c.a_p);
    Ok(m)
}

/// Fully dynamic, voltage-driven composite (or actuator).
///
/// States `(v_z, w_zz, q_z)` per cell and `(p_v, p_w, p_q)` per node, dim
/// `6n`. The input is `u = −V`; it enters the tip charge balance with gain
/// `A_p`, and `y = A_p q̇(tip)`.
pub fn assemble_fd_composite(c: &CompositeCoefficients, grid: &Grid) -> Result<DiscreteSystem> {
    grid.validate()?;
    c.validate()?;
    let stiffness = fd_stiffness(c);
    check_definite("stiffness matrix of the fully dynamic model", &stiffness)?;
    let layout = Layout {
        strains: vec![Field::Vz, Field::Wzz, Field::Qz],
        momenta: vec![Field::Pv, Field::Pw, Field::Pq],
        stagger: vec![Stagger::ClampedRoot; 3],
        stiffness,
        compliance: fd_compliance(c)?,
    };
    let (q, j, b, labels) = assemble(&layout, grid, Port::TipEffort(vec![0.0, 0.0, c.a_p]));
    let mut coefficients = *c;
    coefficients.em = ElectromagneticAssumption::FullyDynamic;
    Ok(finish(q, j, b, labels, *grid, Variant::FullyDynamicVoltage, coefficients, -1.0))
}

/// Stretching/charge beam of a centroidal piezo layer, dim `4n`.
pub fn assemble_beam(m: &MaterialParams, cs: &CrossSection, grid: &Grid) -> Result<DiscreteSystem> {
    grid.validate()?;
    m.validate()?;
    cs.validate()?;
    if cs.i0 != 0.0 {
        return Err(Error::invalid(
            "CrossSection",
            format!("beam requires centroidal geometry, got i0 = {:e}", cs.i0),
        ));
    }
    let c = reinforced_stiffness(m);
    let gb = m.gamma * m.beta;
    let stiffness = DMatrix::from_row_slice(2, 2, &[c * cs.a, -gb * cs.a, -gb * cs.a, m.beta * cs.a]);
    check_definite("stiffness matrix of the beam", &stiffness)?;
    let compliance = DMatrix::from_row_slice(2, 2, &[1.0 / (m.rho * cs.a), 0.0, 0.0, 1.0 / (m.mu * cs.a)]);
    let layout = Layout {
        strains: vec![Field::Vz, Field::Qz],
        momenta: vec![Field::Pv, Field::Pq],
        stagger: vec![Stagger::ClampedRoot; 2],
        stiffness,
        compliance,
    };
    let (q, j, b, labels) = assemble(&layout, grid, Port::TipEffort(vec![0.0, cs.a]));
    let coefficients = CompositeCoefficients::actuator(m, cs)?;
    Ok(finish(q, j, b, labels, *grid, Variant::Beam, coefficients, -1.0))
}

/// Mechanical-only composite under a quasi-static or static field.
///
/// `c_barred` must come from the electromagnetic reduction. The voltage
/// injects strain at the tip with gain `γ A_p`, so `y = γ A_p v̇(tip)`.
pub fn assemble_qs_static_composite(
    c_barred: &CompositeCoefficients,
    grid: &Grid,
) -> Result<DiscreteSystem> {
    grid.validate()?;
    c_barred.validate()?;
    if c_barred.em == ElectromagneticAssumption::FullyDynamic {
        return Err(Error::UnsupportedModel(
            "(quasi-)static assembly needs reduced coefficients".into(),
        ));
    }
    let stiffness = DMatrix::from_row_slice(
        2,
        2,
        &[c_barred.c_a, -c_barred.c_i0, -c_barred.c_i0, c_barred.c_i],
    );
    check_definite("reduced stiffness matrix", &stiffness)?;
    let layout = Layout {
        strains: vec![Field::Vz, Field::Wzz],
        momenta: vec![Field::Pv, Field::Pw],
        stagger: vec![Stagger::ClampedRoot; 2],
        stiffness,
        compliance: inverse("mass matrix (rho_A rho_I - rho_I0^2)", &mechanical_mass(c_barred))?,
    };
    let g = c_barred.gamma * c_barred.a_p;
    let (q, j, b, labels) = assemble(&layout, grid, Port::TipEffort(vec![g, 0.0]));
    Ok(finish(
        q,
        j,
        b,
        labels,
        *grid,
        Variant::QsStaticVoltage(c_barred.em),
        *c_barred,
        -1.0,
    ))
}

/// Fully dynamic actuator driven by the charge rate at the tip.
///
/// The charge line has zero effort at the root and prescribed flow at the
/// tip; the mechanical fields keep the clamped/free conditions. The output
/// is the tip charge effort `βA_p q_z − γβ(A_p v_z − I0 w_zz)` in the last
/// cell.
pub fn assemble_c2b_actuator(c: &CompositeCoefficients, grid: &Grid) -> Result<DiscreteSystem> {
    grid.validate()?;
    c.validate()?;
    if c.em != ElectromagneticAssumption::FullyDynamic {
        return Err(Error::UnsupportedModel(
            "current-through-the-boundary assembly requires a fully dynamic field".into(),
        ));
    }
    let stiffness = fd_stiffness(c);
    check_definite("stiffness matrix of the fully dynamic model", &stiffness)?;
    let layout = Layout {
        strains: vec![Field::Vz, Field::Wzz, Field::Qz],
        momenta: vec![Field::Pv, Field::Pw, Field::Pq],
        stagger: vec![Stagger::ClampedRoot, Stagger::ClampedRoot, Stagger::FreeRoot],
        stiffness,
        compliance: fd_compliance(c)?,
    };
    let (q, j, b, labels) = assemble(&layout, grid, Port::TipFlow(2));
    Ok(finish(q, j, b, labels, *grid, Variant::CurrentBoundary, *c, 1.0))
}

/// Eliminates the charge states of a fully dynamic voltage system under
/// `μ q̈ = 0`.
///
/// With the charge momenta frozen, the discrete charge balance fixes the
/// charge efforts in terms of the input. Solving for `q_z` and substituting
/// gives a mechanical system whose energy matrix is the Schur complement of
/// `Q` on the charge strains.
pub fn static_elimination_oracle(fd: &DiscreteSystem) -> Result<DiscreteSystem> {
    if fd.variant != Variant::FullyDynamicVoltage {
        return Err(Error::UnsupportedModel(
            "static elimination needs a fully dynamic voltage system".into(),
        ));
    }
    let qz = fd.indices_of(Field::Qz);
    let pq = fd.indices_of(Field::Pq);
    let mech: Vec<usize> = (0..fd.dim)
        .filter(|i| !matches!(fd.labels[*i].field, Field::Qz | Field::Pq))
        .collect();

    let q_cc = submatrix(&fd.q_energy, &qz, &qz);
    let q_mc = submatrix(&fd.q_energy, &mech, &qz);
    let q_mm = submatrix(&fd.q_energy, &mech, &mech);
    let chol = q_cc.clone().cholesky().ok_or(Error::Singular {
        context: "charge block of the energy matrix",
        rcond: 0.0,
    })?;
    let q_red = &q_mm - &q_mc * chol.solve(&q_mc.transpose());
    let q_red = (&q_red + q_red.transpose()) * 0.5;

    // Frozen charge momenta: J[pq, qz] (Qx)_qz + B[pq] u = 0.
    let j_pc = submatrix(&fd.structure, &pq, &qz);
    let b_p = DVector::from_iterator(pq.len(), pq.iter().map(|&i| fd.b_in[i]));
    let lu = j_pc.clone().lu();
    let zeta = lu.solve(&(-b_p)).ok_or_else(|| Error::Singular {
        context: "charge balance of the static elimination",
        rcond: rcond_estimate(&j_pc),
    })?;
    let j_mm = submatrix(&fd.structure, &mech, &mech);
    let b_red = &j_mm * (&q_mc * chol.solve(&zeta));

    let labels = mech.iter().map(|&i| fd.labels[i]).collect();
    let mut coefficients = fd.coefficients;
    let g = coefficients.coupling();
    coefficients.c_a -= g * coefficients.a_p;
    coefficients.c_i -= g * coefficients.i0_p * coefficients.i0_p / coefficients.a_p;
    coefficients.c_i0 -= g * coefficients.i0_p;
    coefficients.em = ElectromagneticAssumption::Static;
    Ok(finish(
        q_red,
        j_mm,
        b_red,
        labels,
        fd.grid,
        Variant::StaticReduced,
        coefficients,
        fd.port_sign,
    ))
}

fn rcond_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Assembles the discretisation that matches a validated model description.
pub fn build_system(spec: &ModelSpec, grid: &Grid) -> Result<DiscreteSystem> {
    spec.validate()?;
    let mut sys = match (spec.kind, spec.actuation, spec.em) {
        (ModelKind::Beam, _, _) => {
            let cs = spec.piezo.cross_section()?;
            assemble_beam(&spec.piezo.material, &cs, grid)?
        }
        (_, Actuation::CurrentThroughBoundary, _) => {
            assemble_c2b_actuator(&spec.coefficients()?, grid)?
        }
        (_, Actuation::Voltage, ElectromagneticAssumption::FullyDynamic) => {
            assemble_fd_composite(&spec.coefficients()?, grid)?
        }
        (_, Actuation::Voltage, _) => {
            assemble_qs_static_composite(&spec.effective_coefficients()?, grid)?
        }
    };
    sys.spec = Some(*spec);
    Ok(sys)
}
