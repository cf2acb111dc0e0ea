//! Dense helpers shared by assembly, integration and analysis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Rows and columns `rows × cols` of `m`, in the given order.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `‖A − B‖_max / max(‖A‖_max, ‖B‖_max)`.
pub fn relative_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(a).max(max_abs(b)).max(f64::MIN_POSITIVE)
}

/// `‖QA + AᵀQ‖_max / max(1, ‖QA‖_max)`.
pub fn lossless_residual(q: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let qa = q * a;
    let sym = &qa + qa.transpose();
    max_abs(&sym) / max_abs(&qa).max(1.0)
}

/// Largest singular value estimate by power iteration on `AᵀA`.
pub fn spectral_norm_estimate(a: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, non-symmetric start so no mode is missed by parity.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - sigma).abs() <= 1e-10 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Cholesky factor `Q = L Lᵀ` of an energy matrix.
///
/// In coordinates `ξ = Lᵀ x` the energy is `½|ξ|²` and the open-loop
/// generator becomes skew-symmetric.
#[derive(Debug, Clone)]
pub struct EnergyFactor {
    l: DMatrix<f64>,
}

impl EnergyFactor {
    pub fn new(q: &DMatrix<f64>) -> Result<Self> {
        // Scale to unit diagonal first: Cholesky accuracy then depends on the
        // conditioning of the scaled matrix, not on the raw unit spread.
        let n = q.nrows();
        let d = DVector::from_fn(n, |i, _| q[(i, i)].max(0.0).sqrt());
        if d.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                what: "energy matrix has a non-positive diagonal entry".into(),
                margin: 0.0,
            });
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| q[(i, j)] / (d[i] * d[j]));
        let chol = scaled.cholesky().ok_or_else(|| Error::NotPositiveDefinite {
            what: "energy matrix".into(),
            margin: 0.0,
        })?;
        let mut l = chol.unpack();
        for i in 0..n {
            for j in 0..=i {
                l[(i, j)] *= d[i];
            }
        }
        Ok(EnergyFactor { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `ξ = Lᵀ x`.
    pub fn to_energy(&self, x: &DVector<f64>) -> DVector<f64> {
        self.l.tr_mul(x)
    }

    /// `x = L⁻ᵀ ξ`.
    pub fn from_energy(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.l
            .transpose()
            .solve_upper_triangular(xi)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `Lᵀ A L⁻ᵀ`.
    pub fn transform_generator(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        // X = Lᵀ A L⁻ᵀ  ⇔  Xᵀ = L⁻¹ (Aᵀ L).
        let rhs = a.tr_mul(&self.l);
        self.l
            .solve_lower_triangular(&rhs)
            .expect("Cholesky factor has a positive diagonal")
            .transpose()
    }

    /// `Lᵀ b`.
    pub fn transform_input(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l.tr_mul(b)
    }
}

/// Smallest eigenvalue of `D⁻¹ S D⁻¹` with `D = sqrt(diag S)`.
///
/// A scale-free positive-definiteness margin for small coefficient blocks.
pub fn normalised_min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    if d.iter().any(|&x| !(x > 0.0)) {
        return d.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (d[i] * d[j]).sqrt());
    scaled
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
