use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::kef::KefVector;
use crate::dmd::IMAGINARY_TOL;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{complex_singular_values, lstsq_complex, numerical_rank};

/// Snapshots inspected by [`observability_rank`].
pub const MAX_OBSERVABILITY_SAMPLES: usize = 50;

/// Share of samples that must reach rank N for a fully observable verdict.
pub const OBSERVABLE_FRACTION: f64 = 0.95;

/// Relative singular-value cutoff when solving for the velocity.
pub const RECONSTRUCTION_RANK_TOL: f64 = 1e-8;

/// Default finite-difference step `1e-5 (1 + |x|)`.
pub fn default_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

/// L x N matrix whose row i is the gradient of `phi_i` at `x`, by the
/// fourth-order central stencil with step `h` along each coordinate.
pub fn jacobian(kefs: &KefVector, x: &DVector<f64>, h: f64) -> Result<DMatrix<Complex64>> {
    if !(h > 0.0) {
        return Err(Error::DomainError(format!("step must be positive, got {h}")));
    }
    let n = x.len();
    let mut jac = DMatrix::zeros(kefs.len(), n);
    for j in 0..n {
        let at = |s: f64| {
            let mut y = x.clone();
            y[j] += s * h;
            kefs.eval(&y)
        };
        let (p1, p2, m1, m2) = (at(1.0)?, at(2.0)?, at(-1.0)?, at(-2.0)?);
        let col = ((p1 - m1) * Complex64::new(8.0, 0.0) - (p2 - m2)) / Complex64::new(12.0 * h, 0.0);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    FullyObservable,
    RankDeficient,
}

#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub jacobians: Vec<DMatrix<Complex64>>,
    pub ranks: Vec<usize>,
    /// Sampled snapshots where some eigenfunction could not be evaluated.
    pub skipped: Vec<usize>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReportJson {
    pub times: Vec<f64>,
    pub ranks: Vec<usize>,
    pub skipped: Vec<usize>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl From<&ObservabilityReport> for ObservabilityReportJson {
    fn from(r: &ObservabilityReport) -> Self {
        Self {
            times: r.times.clone(),
            ranks: r.ranks.clone(),
            skipped: r.skipped.clone(),
            tolerance: r.tolerance,
            verdict: r.verdict,
        }
    }
}

fn sample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| (i as f64 * (n - 1) as f64 / (max - 1) as f64).round() as usize).collect()
}

/// Numerical rank of the eigenfunction Jacobian at up to 50 evenly spread
/// snapshots. `h = None` uses [`default_step`] at each state.
pub fn observability_rank(kefs: &KefVector, traj: &Trajectory, h: Option<f64>, tol: f64) -> ObservabilityReport {
    let n = traj.dim();
    let mut report = ObservabilityReport {
        indices: Vec::new(),
        times: Vec::new(),
        jacobians: Vec::new(),
        ranks: Vec::new(),
        skipped: Vec::new(),
        tolerance: tol,
        verdict: Verdict::RankDeficient,
    };
    for k in sample_indices(traj.len(), MAX_OBSERVABILITY_SAMPLES) {
        let x = traj.state(k);
        let step = h.unwrap_or_else(|| default_step(&x));
        match jacobian(kefs, &x, step) {
            Ok(jac) => {
                let rank = if jac.is_empty() { 0 } else { numerical_rank(&complex_singular_values(&jac), tol) };
                report.indices.push(k);
                report.times.push(traj.times()[k]);
                report.jacobians.push(jac);
                report.ranks.push(rank);
            }
            Err(_) => report.skipped.push(k),
        }
    }
    let full = report.ranks.iter().filter(|&&r| r == n).count();
    if !report.ranks.is_empty() && full as f64 >= OBSERVABLE_FRACTION * report.ranks.len() as f64 {
        report.verdict = Verdict::FullyObservable;
    }
    report
}

/// Velocity estimate `(J* J)^{-1} J* Lambda phi(x)`, solved as a least-squares
/// problem. The imaginary part must vanish relative to the real part.
pub fn reconstruct_dynamics(kefs: &KefVector, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let jac = jacobian(kefs, x, h)?;
    if jac.nrows() < jac.ncols() {
        return Err(Error::RankDeficientJacobian { rank: jac.nrows(), required: jac.ncols() });
    }
    let rhs = kefs.lambda_matrix() * kefs.eval(x)?;
    let p = lstsq_complex(&jac, &rhs, RECONSTRUCTION_RANK_TOL)?;
    let re = p.map(|c| c.re);
    let im = p.map(|c| c.im);
    let rel = im.norm() / re.norm().max(f64::MIN_POSITIVE);
    if im.norm() > 0.0 && rel > IMAGINARY_TOL {
        return Err(Error::ImaginaryResidue(rel));
    }
    Ok(re)
}

fn central_velocity(traj: &Trajectory, k: usize) -> DVector<f64> {
    let t = traj.times();
    (traj.states().column(k + 1) - traj.states().column(k - 1)) / (t[k + 1] - t[k - 1])
}

/// `max_k |V J(x_k) P_k - P_k| / |P_k|` with `P_k` the central-difference
/// velocity; small when the velocity is an eigenvector of `V J` with eigenvalue 1.
pub fn koopman_mode_check(v: &DMatrix<f64>, kefs: &KefVector, traj: &Trajectory, h: Option<f64>) -> Result<f64> {
    if v.nrows() != traj.dim() || v.ncols() != kefs.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", traj.dim(), kefs.len()),
            found: format!("{} x {}", v.nrows(), v.ncols()),
        });
    }
    let vc = v.map(|a| Complex64::new(a, 0.0));
    let mut worst = 0.0f64;
    for k in 1..traj.len().saturating_sub(1) {
        let p = central_velocity(traj, k);
        let pn = p.norm();
        if pn == 0.0 {
            continue;
        }
        let x = traj.state(k);
        let jac = jacobian(kefs, &x, h.unwrap_or_else(|| default_step(&x)))?;
        let pc = p.map(|a| Complex64::new(a, 0.0));
        let r = (&vc * jac * &pc - &pc).norm() / pn;
        worst = worst.max(r);
    }
    Ok(worst)
}

/// `max_k |x_k - V phi(x_k)| / |x_k|` over the snapshots of `traj`.
pub fn mode_decomposition_residual(v: &DMatrix<f64>, kefs: &KefVector, traj: &Trajectory) -> Result<f64> {
    let vc = v.map(|a| Complex64::new(a, 0.0));
    let mut worst = 0.0f64;
    for k in 0..traj.len() {
        let x = traj.state(k);
        let xc = x.map(|a| Complex64::new(a, 0.0));
        let r = (&xc - &vc * kefs.eval(&x)?).norm() / x.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Central-difference velocities at interior snapshots, paired with the
/// snapshot index.
pub fn finite_difference_velocities(traj: &Trajectory) -> Vec<(usize, DVector<f64>)> {
    (1..traj.len().saturating_sub(1)).map(|k| (k, central_velocity(traj, k))).collect()
}
