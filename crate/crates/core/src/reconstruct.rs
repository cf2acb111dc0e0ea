//! Deflection fields from strain states.
//!
//! Strains live on cells, so one cumulative sum of `dz·strain` gives a
//! quantity at the nodes exactly for piecewise-constant strain. The
//! bending slope obtained that way is integrated once more with the
//! trapezoid rule. Both steps are exact for constants and second order for
//! smooth strain.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::{DiscreteSystem, Field};
use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// Deflections at the grid nodes `z_0 = 0, …, z_n = length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFrame {
    pub t: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl FieldFrame {
    pub fn v_tip(&self) -> f64 {
        *self.v.last().expect("frame has at least the root node")
    }

    pub fn w_tip(&self) -> f64 {
        *self.w.last().expect("frame has at least the root node")
    }
}

/// Cumulative `Σ dz·s_j`, starting from zero at the root.
fn cumulative_cells(strain: &[f64], dz: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(strain.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for s in strain {
        acc += dz * s;
        out.push(acc);
    }
    out
}

fn cumulative_trapezoid(nodal: &[f64], dz: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nodal.len());
    let mut acc = 0.0;
    out.push(acc);
    for pair in nodal.windows(2) {
        acc += 0.5 * dz * (pair[0] + pair[1]);
        out.push(acc);
    }
    out
}

/// Reconstructs one state. Systems without bending strain (the beam,
/// whose bending is decoupled and unforced) report `w ≡ 0`.
pub fn reconstruct_state(sys: &DiscreteSystem, t: f64, x: &DVector<f64>) -> Result<FieldFrame> {
    if x.len() != sys.dim {
        return Err(Error::Dimension {
            expected: sys.dim,
            got: x.len(),
        });
    }
    let vz = sys.indices_of(Field::Vz);
    if vz.is_empty() {
        return Err(Error::MissingLabels("v_z"));
    }
    let dz = sys.grid.dz;
    let n = sys.grid.n;
    let strain = |idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
    let v = cumulative_cells(&strain(&vz), dz);
    let wzz = sys.indices_of(Field::Wzz);
    let w = if wzz.is_empty() {
        vec![0.0; n + 1]
    } else {
        let slope = cumulative_cells(&strain(&wzz), dz);
        cumulative_trapezoid(&slope, dz)
    };
    Ok(FieldFrame {
        t,
        z: (0..=n).map(|k| sys.grid.node(k)).collect(),
        v,
        w,
    })
}

pub fn reconstruct_fields(traj: &Trajectory, sys: &DiscreteSystem) -> Result<Vec<FieldFrame>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| reconstruct_state(sys, t, x))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TipSeries {
    pub t: Vec<f64>,
    pub v_tip: Vec<f64>,
    pub w_tip: Vec<f64>,
}

impl TipSeries {
    pub fn peak_abs_w(&self) -> f64 {
        self.w_tip.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

pub fn tip_series(frames: &[FieldFrame]) -> TipSeries {
    TipSeries {
        t: frames.iter().map(|f| f.t).collect(),
        v_tip: frames.iter().map(FieldFrame::v_tip).collect(),
        w_tip: frames.iter().map(FieldFrame::w_tip).collect(),
    }
}

/// Time integral of a tip velocity (`Field::Pv` gives `v(tip)`, `Field::Pw`
/// the tip slope `w_z(tip)`), trapezoid rule on the samples, offset so the
/// series starts at `start`.
///
/// For trajectories from the midpoint rule sampled at every step this
/// reproduces the spatial reconstruction to rounding, since both integrate
/// the same discrete kinematic identity.
pub fn time_integrated_tip(traj: &Trajectory, sys: &DiscreteSystem, field: Field, start: f64) -> Result<Vec<f64>> {
    let velocities: Vec<f64> = traj
        .states
        .iter()
        .map(|x| sys.tip_velocity(field, x).ok_or(Error::MissingLabels(field.name())))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(velocities.len());
    let mut acc = start;
    for k in 0..velocities.len() {
        if k > 0 {
            acc += 0.5 * (traj.times[k] - traj.times[k - 1]) * (velocities[k] + velocities[k - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::sample_profile;
    use crate::assembly::{build_system, Grid};
    use crate::model::ModelSpec;
    use proptest::prelude::*;

    fn composite(n: usize) -> DiscreteSystem {
        let spec = ModelSpec::reference_composite();
        build_system(&spec, &Grid::new(n, 1.0).unwrap()).unwrap()
    }

    fn uniform(sys: &DiscreteSystem, vz: f64, wzz: f64) -> DVector<f64> {
        sample_profile(sys, |f, _| match f {
            Field::Vz => vz,
            Field::Wzz => wzz,
            _ => 0.0,
        })
    }

    #[test]
    fn constants_integrate_exactly() {
        let sys = composite(7);
        let f = reconstruct_state(&sys, 0.0, &uniform(&sys, 3e-4, 2e-3)).unwrap();
        assert_eq!(f.v[0], 0.0);
        assert_eq!(f.w[0], 0.0);
        assert!((f.v_tip() - 3e-4).abs() < 1e-18);
        assert!((f.w_tip() - 1e-3).abs() < 1e-18);
        assert_eq!(f.z.len(), 8);
        assert_eq!(f.z[7], 1.0);
    }

    #[test]
    fn quadratic_curvature_converges_at_second_order() {
        // w_zz = 1 + z²  ⇒  w(1) = 1/2 + 1/12.
        let exact = 0.5 + 1.0 / 12.0;
        let err = |n: usize| {
            let sys = composite(n);
            let x = sample_profile(&sys, |f, z| if f == Field::Wzz { 1.0 + z * z } else { 0.0 });
            (reconstruct_state(&sys, 0.0, &x).unwrap().w_tip() - exact).abs()
        };
        let (e1, e2, e3) = (err(8), err(16), err(32));
        let p1 = (e1 / e2).log2();
        let p2 = (e2 / e3).log2();
        assert!((p1 - 2.0).abs() < 0.1 && (p2 - 2.0).abs() < 0.1, "{p1} {p2}");
    }

    #[test]
    fn wrong_dimension_and_missing_labels() {
        let sys = composite(3);
        assert!(matches!(
            reconstruct_state(&sys, 0.0, &DVector::zeros(5)),
            Err(Error::Dimension { .. })
        ));
        let mut bare = sys.clone();
        bare.labels.iter_mut().for_each(|l| {
            if l.field == Field::Vz {
                l.field = Field::Qz;
            }
        });
        assert!(matches!(
            reconstruct_state(&bare, 0.0, &DVector::zeros(bare.dim)),
            Err(Error::MissingLabels(_))
        ));
    }

    proptest! {
        #[test]
        fn reconstruction_is_linear(
            a in proptest::collection::vec(-1.0f64..1.0, 24),
            b in proptest::collection::vec(-1.0f64..1.0, 24),
        ) {
            let sys = composite(4);
            let xa = DVector::from_vec(a);
            let xb = DVector::from_vec(b);
            let fa = reconstruct_state(&sys, 0.0, &xa).unwrap();
            let fb = reconstruct_state(&sys, 0.0, &xb).unwrap();
            let fs = reconstruct_state(&sys, 0.0, &(&xa + &xb)).unwrap();
            for k in 0..fs.v.len() {
                prop_assert!((fs.v[k] - fa.v[k] - fb.v[k]).abs() <= 1e-15);
                prop_assert!((fs.w[k] - fa.w[k] - fb.w[k]).abs() <= 1e-15);
            }
        }
    }
}
