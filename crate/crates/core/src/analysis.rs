//! Numerical certificates for assembled and closed-loop systems.
//!
//! All reports state facts about one discretisation; they carry the grid
//! size so that nobody mistakes them for statements about the PDE.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assembly::{DiscreteSystem, Field};
use crate::control::{ClosedLoopSystem, EnergyForm};
use crate::error::Result;
use crate::integrate::Trajectory;

/// `½ xᵀ Q x`.
pub fn total_energy(sys: &DiscreteSystem, x: &DVector<f64>) -> f64 {
    sys.energy(x)
}

/// Samples a continuous profile onto the state: strains at cell midpoints,
/// momenta at their nodes.
pub fn sample_profile(sys: &DiscreteSystem, profile: impl Fn(Field, f64) -> f64) -> DVector<f64> {
    DVector::from_fn(sys.dim, |i, _| {
        let l = sys.labels[i];
        profile(l.field, l.z)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub n_samples: usize,
    pub seed: u64,
    pub gain: f64,
    /// Largest `xᵀQAx` over the unit-energy samples.
    pub max_rate: f64,
    pub max_abs_rate: f64,
    /// Largest `|xᵀQAx + gain·y²|` and the same divided by `‖Qx‖·‖Ax‖`.
    pub max_absolute_defect: f64,
    pub max_relative_defect: f64,
    /// Every rate is `≤ 1e-10·‖Qx‖·‖Ax‖`.
    pub nonpositive: bool,
    pub segments: usize,
}

/// Evaluates the energy rate at random states with `H(x) = 1`.
pub fn dissipativity_probe(cl: &ClosedLoopSystem, n_samples: usize, seed: u64) -> Result<DissipativityReport> {
    let form = EnergyForm::new(&cl.base, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = &cl.base.q_energy;
    let mut report = DissipativityReport {
        n_samples: n_samples.max(1),
        seed,
        gain: cl.gain,
        max_rate: f64::NEG_INFINITY,
        max_abs_rate: 0.0,
        max_absolute_defect: 0.0,
        max_relative_defect: 0.0,
        nonpositive: true,
        segments: cl.base.grid.n,
    };
    for _ in 0..report.n_samples {
        let mut xi = DVector::from_fn(form.dim(), |_, _| StandardNormal.sample(&mut rng));
        xi *= std::f64::consts::SQRT_2 / xi.norm();
        let x = form.factor.from_energy(&xi);
        let qx = q * &x;
        let ax = &cl.a_cl * &x;
        let rate = qx.dot(&ax);
        let y = cl.base.output(&x);
        let defect = (rate + cl.gain * y * y).abs();
        let scale = (qx.norm() * ax.norm()).max(f64::MIN_POSITIVE);
        report.max_rate = report.max_rate.max(rate);
        report.max_abs_rate = report.max_abs_rate.max(rate.abs());
        report.max_absolute_defect = report.max_absolute_defect.max(defect);
        report.max_relative_defect = report.max_relative_defect.max(defect / scale);
        if rate > 1e-10 * scale {
            report.nonpositive = false;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// `(re, im)` pairs in 1/s, sorted by imaginary part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_real: f64,
    pub max_abs: f64,
    pub min_abs: f64,
    pub paired_conjugates: bool,
    pub segments: usize,
}

impl SpectrumReport {
    /// `max_real ≤ rel·max|λ|`.
    pub fn no_unstable_modes(&self, rel: f64) -> bool {
        self.max_real <= rel * self.max_abs
    }

    pub fn purely_imaginary(&self, rel: f64) -> bool {
        self.eigenvalues.iter().all(|(re, _)| re.abs() <= rel * self.max_abs)
    }
}

/// Eigenvalues of the generator, computed in energy coordinates.
pub fn spectrum(cl: &ClosedLoopSystem) -> Result<SpectrumReport> {
    let form = cl.energy_form()?;
    Ok(spectrum_of(&form.a, cl.base.grid.n))
}

/// Eigenvalues of an arbitrary real matrix.
pub fn spectrum_of(a: &DMatrix<f64>, segments: usize) -> SpectrumReport {
    let ev: Vec<Complex<f64>> = a.complex_eigenvalues().iter().cloned().collect();
    let mut eigenvalues: Vec<(f64, f64)> = ev.iter().map(|z| (z.re, z.im)).collect();
    eigenvalues.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let max_abs = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let min_abs = ev.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let max_real = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-8 * max_abs.max(f64::MIN_POSITIVE);
    let mut used = vec![false; ev.len()];
    let mut paired = true;
    for i in 0..ev.len() {
        if used[i] || ev[i].im.abs() <= tol {
            continue;
        }
        let partner = (0..ev.len()).find(|&j| {
            j != i && !used[j] && (ev[j].re - ev[i].re).abs() <= tol && (ev[j].im + ev[i].im).abs() <= tol
        });
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => paired = false,
        }
    }
    SpectrumReport {
        eigenvalues,
        max_real,
        max_abs,
        min_abs: if min_abs.is_finite() { min_abs } else { 0.0 },
        paired_conjugates: paired,
        segments,
    }
}

/// Relative size below which a mode counts as invisible at the output.
pub const OBSERVABILITY_TOL: f64 = 1e-15;
/// Relative eigenvalue distance below which modes form one cluster.
pub const CLUSTER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaSalleReport {
    pub dim: usize,
    pub rank: usize,
    /// `rank == dim`: the only trajectory with zero output is zero.
    pub trivial: bool,
    /// Smallest `|βᵀv|/‖β‖` over the modes.
    pub min_mode_observability: f64,
    pub clusters: usize,
    pub segments: usize,
}

/// Observability rank of the output under the closed-loop dynamics.
///
/// The closed loop and the lossless plant share their unobservable
/// subspace, and the plant generator is skew-symmetric in energy
/// coordinates. Diagonalising it unitarily and testing each eigenspace
/// against the output (Hautus test) gives the rank of the stacked matrix
/// `[c; cA; …; cA^{dim−1}]` without forming powers of `A`, whose entries
/// span too many decades to rank-reveal directly.
pub fn lasalle_rank_check(cl: &ClosedLoopSystem) -> Result<LaSalleReport> {
    let form = EnergyForm::new(&cl.base, 0.0)?;
    let n = form.dim();
    let herm = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| Complex::new(0.0, form.a[(i, j)]));
    let eig = herm.symmetric_eigen();
    let beta_norm = form.beta.norm();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let beta_c: DVector<Complex<f64>> = form.beta.map(|v| Complex::new(v, 0.0));
    let mut rank = 0;
    let mut clusters = 0;
    let mut min_obs = f64::INFINITY;
    let mut k = 0;
    while k < n {
        let mut end = k + 1;
        while end < n
            && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= CLUSTER_TOL * scale
        {
            end += 1;
        }
        clusters += 1;
        // Projection of the output direction onto the cluster's eigenspace.
        let mut proj_sq = 0.0;
        for &m in &order[k..end] {
            let v = eig.eigenvectors.column(m);
            let p = v.dotc(&beta_c).norm();
            proj_sq += p * p;
        }
        let obs = if beta_norm > 0.0 { proj_sq.sqrt() / beta_norm } else { 0.0 };
        min_obs = min_obs.min(obs);
        // A cluster seen through a single output shows at most one direction.
        rank += usize::from(obs > OBSERVABILITY_TOL);
        k = end;
    }
    Ok(LaSalleReport {
        dim: n,
        rank,
        trivial: rank == n,
        min_mode_observability: if min_obs.is_finite() { min_obs } else { 0.0 },
        clusters,
        segments: cl.base.grid.n,
    })
}

/// Rank of `[c; cA; …; cA^{dim−1}]` by column-pivoted QR, rows normalised.
///
/// Only meaningful for small, well-scaled systems; kept as an independent
/// cross-check of [`lasalle_rank_check`].
pub fn krylov_rank(a: &DMatrix<f64>, c: &DVector<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let mut rows = DMatrix::<f64>::zeros(n, n);
    let mut r = c.transpose();
    for k in 0..n {
        let norm = r.norm();
        if norm == 0.0 {
            break;
        }
        r /= norm;
        rows.row_mut(k).copy_from(&r);
        r = &r * a;
    }
    let qr = rows.col_piv_qr();
    let diag = qr.r().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    diag.iter().filter(|v| v.abs() > rel_tol * max).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub h0: f64,
    pub h_end: f64,
    /// First sample time with `H < h0/2`, measured from the first sample.
    pub half_life_estimate: Option<f64>,
    /// No sample exceeds its predecessor by more than `1e-12·h0`.
    pub monotone: bool,
    pub ratio: f64,
}

pub fn decay_metrics(traj: &Trajectory) -> DecayReport {
    let h0 = traj.energies.first().copied().unwrap_or(0.0);
    let h_end = traj.energies.last().copied().unwrap_or(0.0);
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let half_life_estimate = traj
        .times
        .iter()
        .zip(&traj.energies)
        .find(|(_, h)| **h < 0.5 * h0)
        .map(|(t, _)| t - t0);
    let monotone = traj.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12 * h0);
    DecayReport {
        h0,
        h_end,
        half_life_estimate,
        monotone,
        ratio: if h0 > 0.0 { h_end / h0 } else { 0.0 },
    }
}

/// `max_k |H_k − H_0 − Σ_{j<k} u·y·dt|`.
///
/// Uses the integrator's own supply record when present, otherwise the
/// trapezoid rule on the sampled `u·y`.
pub fn power_balance_residual(traj: &Trajectory) -> f64 {
    let Some(&h0) = traj.energies.first() else {
        return 0.0;
    };
    let supplied: Vec<f64> = if traj.supplied.len() == traj.energies.len() {
        let s0 = traj.supplied[0];
        traj.supplied.iter().map(|s| s - s0).collect()
    } else {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for k in 1..traj.len() {
            let dt = traj.times[k] - traj.times[k - 1];
            let p0 = traj.inputs[k - 1] * traj.outputs[k - 1];
            let p1 = traj.inputs[k] * traj.outputs[k];
            acc += 0.5 * dt * (p0 + p1);
            out.push(acc);
        }
        out
    };
    traj.energies
        .iter()
        .zip(&supplied)
        .map(|(h, s)| (h - h0 - s).abs())
        .fold(0.0, f64::max)
}
