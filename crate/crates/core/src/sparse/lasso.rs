use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::ProfileDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Convergence threshold on the largest KKT violation.
    pub tol: f64,
    /// Full coordinate sweeps before giving up; `None` means `10 (L + 1)`.
    pub max_iters: Option<usize>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: None }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    /// N x (L + 1) modes on the unnormalized atoms: `X ~ modes * D`.
    pub modes: DMatrix<f64>,
    /// Same coefficients on the unit-norm atoms.
    pub normalized: DMatrix<f64>,
    pub sweeps: usize,
    pub max_kkt_violation: f64,
    pub reg: f64,
}

/// Shared per-dictionary data: unit-norm atoms and their Gram matrix.
pub(crate) struct LassoProblem<'a> {
    dict: &'a ProfileDictionary,
    atoms: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl<'a> LassoProblem<'a> {
    pub(crate) fn new(dict: &'a ProfileDictionary) -> Self {
        let atoms = dict.normalized_atoms();
        let gram = &atoms * atoms.transpose();
        Self { dict, atoms, gram }
    }

    /// Correlations of every data row with every normalized atom, N x (L + 1).
    fn correlations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.atoms.transpose()
    }

    pub(crate) fn solve(
        &self,
        x: &DMatrix<f64>,
        reg: f64,
        opts: &LassoOptions,
        warm: Option<&DMatrix<f64>>,
    ) -> Result<LassoSolution> {
        if x.ncols() != self.atoms.ncols() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} time samples", self.atoms.ncols()),
                found: format!("{}", x.ncols()),
            });
        }
        if !(reg >= 0.0) || !(opts.tol > 0.0) {
            return Err(Error::DomainError(format!(
                "need reg >= 0 and tol > 0 (reg {reg}, tol {})",
                opts.tol
            )));
        }
        let k = self.atoms.nrows();
        let max_sweeps = opts.max_iters.unwrap_or(10 * k);
        let q = self.correlations(x);
        let rows: Vec<(DVector<f64>, usize, f64)> = (0..x.nrows())
            .into_par_iter()
            .map(|r| {
                let q_row: DVector<f64> = q.row(r).transpose();
                let w0 = warm.map(|w| w.row(r).transpose());
                solve_row(&self.gram, &q_row, reg, opts.tol, max_sweeps, w0)
            })
            .collect();

        let mut normalized = DMatrix::zeros(x.nrows(), k);
        let mut sweeps = 0;
        let mut worst: f64 = 0.0;
        for (r, (w, s, v)) in rows.into_iter().enumerate() {
            normalized.set_row(r, &w.transpose());
            sweeps = sweeps.max(s);
            worst = worst.max(v);
        }
        if worst > opts.tol {
            return Err(Error::NoConvergence { iterations: sweeps, violation: worst });
        }
        let mut modes = normalized.clone();
        for (mut col, n) in modes.column_iter_mut().zip(self.dict.norms().iter()) {
            col /= *n;
        }
        Ok(LassoSolution { modes, normalized, sweeps, max_kkt_violation: worst, reg })
    }
}

const SINGULAR_RIDGE: f64 = 1e-12;

fn soft_threshold(z: f64, reg: f64) -> f64 {
    if z > reg {
        z - reg
    } else if z < -reg {
        z + reg
    } else {
        0.0
    }
}

fn kkt_violation(c: &DVector<f64>, w: &DVector<f64>, reg: f64) -> f64 {
    c.iter()
        .zip(w.iter())
        .map(|(&cj, &wj)| {
            if wj == 0.0 {
                (cj.abs() - reg).max(0.0)
            } else {
                (cj - reg * wj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Cyclic coordinate descent for one data row against unit-norm atoms.
///
/// `c = q - G w` is the correlation of the current residual with each atom.
/// Each outer sweep visits every coordinate once, then polishes the active
/// set; `c` is recomputed from scratch at every outer sweep.
fn solve_row(
    gram: &DMatrix<f64>,
    q: &DVector<f64>,
    reg: f64,
    tol: f64,
    max_sweeps: usize,
    warm: Option<DVector<f64>>,
) -> (DVector<f64>, usize, f64) {
    let k = q.len();
    let mut w = warm.unwrap_or_else(|| DVector::zeros(k));
    let mut violation = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let mut c = q - gram * &w;
        violation = kkt_violation(&c, &w, reg);
        if violation <= tol {
            break;
        }
        sweeps += 1;
        for j in 0..k {
            update(gram, &mut c, &mut w, j, reg);
        }
        if let Some(exact) = polish(gram, q, &w, reg, tol) {
            let v = kkt_violation(&(q - gram * &exact), &exact, reg);
            if v <= tol {
                return (exact, sweeps, v);
            }
        }
        let active: Vec<usize> = (0..k).filter(|&j| w[j] != 0.0).collect();
        for _ in 0..k {
            let mut delta: f64 = 0.0;
            for &j in &active {
                delta = delta.max(update(gram, &mut c, &mut w, j, reg).abs());
            }
            if delta <= 0.1 * tol {
                break;
            }
        }
    }
    if sweeps == max_sweeps {
        violation = kkt_violation(&(q - gram * &w), &w, reg);
    }
    (w, sweeps, violation)
}

/// Active-set refinement started from the coordinate-descent support.
///
/// With signs `s_A` fixed, the restricted optimum solves
/// `G_AA w_A = q_A - reg s_A`. The step towards it is a line search on the
/// true objective over the segment end and every zero crossing along it, so
/// each step decreases the objective even when signs change. Once the active
/// coordinates are optimal, the inactive atom with the largest KKT violation
/// joins with the sign of its correlation. Returns `None` if the iteration
/// budget runs out.
fn polish(
    gram: &DMatrix<f64>,
    q: &DVector<f64>,
    w: &DVector<f64>,
    reg: f64,
    tol: f64,
) -> Option<DVector<f64>> {
    let k = q.len();
    let objective = |v: &DVector<f64>| 0.5 * v.dot(&(gram * v)) - q.dot(v) + reg * v.lp_norm(1);
    let mut cur = w.clone();
    let mut sign = cur.map(f64::signum);
    for j in 0..k {
        if cur[j] == 0.0 {
            sign[j] = 0.0;
        }
    }
    for _ in 0..4 * k + 4 {
        let c = q - gram * &cur;
        let active_ok = (0..k).filter(|&j| sign[j] != 0.0).all(|j| (c[j] - reg * sign[j]).abs() <= tol);
        if active_ok {
            let entering = (0..k)
                .filter(|&j| sign[j] == 0.0)
                .map(|j| (j, c[j].abs() - reg))
                .filter(|&(_, v)| v > tol)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match entering {
                None => return Some(cur),
                Some((j, _)) => sign[j] = c[j].signum(),
            }
        }
        let active: Vec<usize> = (0..k).filter(|&j| sign[j] != 0.0).collect();
        let g = gram.select_rows(&active).select_columns(&active);
        let rhs = DVector::from_iterator(active.len(), active.iter().map(|&j| q[j] - reg * sign[j]));
        // Atoms that are affine over the whole window make G_AA singular. A
        // tiny ridge then sends z far along the null space and the line
        // search stops at the first useful zero crossing.
        let z = match g.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let ridge = SINGULAR_RIDGE * g.diagonal().max();
                (g + DMatrix::identity(active.len(), active.len()) * ridge).cholesky()?.solve(&rhs)
            }
        };
        let mut target = DVector::zeros(k);
        for (i, &j) in active.iter().enumerate() {
            target[j] = z[i];
        }
        let mut best = target.clone();
        let mut best_val = objective(&best);
        for &j in &active {
            if cur[j] != 0.0 && cur[j].signum() != target[j].signum() {
                let theta = cur[j] / (cur[j] - target[j]);
                let mut p = &cur + (&target - &cur) * theta;
                p[j] = 0.0;
                let val = objective(&p);
                if val < best_val {
                    best = p;
                    best_val = val;
                }
            }
        }
        cur = best;
        for j in 0..k {
            sign[j] = if cur[j] == 0.0 { 0.0 } else { cur[j].signum() };
        }
    }
    None
}

#[inline]
fn update(gram: &DMatrix<f64>, c: &mut DVector<f64>, w: &mut DVector<f64>, j: usize, reg: f64) -> f64 {
    let old = w[j];
    let new = soft_threshold(c[j] + old, reg);
    let d = new - old;
    if d != 0.0 {
        w[j] = new;
        c.axpy(-d, &gram.column(j), 1.0);
    }
    d
}

/// Coordinate-descent minimizer of `1/2 ||X - V A||_F^2 + reg sum |V_ij|`
/// on unit-norm atoms `A`, returned on both atom scalings.
pub fn lasso(
    x: &DMatrix<f64>,
    dict: &ProfileDictionary,
    reg: f64,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    LassoProblem::new(dict).solve(x, reg, opts, None)
}

/// Smallest regularization for which the Lasso solution is identically zero.
pub fn reg_max(x: &DMatrix<f64>, dict: &ProfileDictionary) -> f64 {
    LassoProblem::new(dict).correlations(x).amax()
}

/// Largest KKT violation of `normalized` (coefficients on unit-norm atoms).
pub fn kkt_check(x: &DMatrix<f64>, dict: &ProfileDictionary, normalized: &DMatrix<f64>, reg: f64) -> f64 {
    let atoms = dict.normalized_atoms();
    let resid = x - normalized * &atoms;
    let c = resid * atoms.transpose();
    (0..x.nrows())
        .map(|r| kkt_violation(&c.row(r).transpose(), &normalized.row(r).transpose(), reg))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeGrid;
    use crate::profiles::{build_dictionary, log_space, ProfileFamily, ProfileKind};

    fn dict(lambdas: Vec<f64>, end: f64, n: usize) -> ProfileDictionary {
        let fam = ProfileFamily::new(ProfileKind::TruncatedLinear, lambdas).unwrap();
        build_dictionary(&fam, &TimeGrid::uniform(0.0, end, n).unwrap()).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_modes() {
        let d = dict(vec![0.1, 0.2, 0.5], 10.0, 21);
        let s = lasso(&DMatrix::zeros(3, 21), &d, 0.1, &LassoOptions::default()).unwrap();
        assert!(s.modes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unregularized_square_dictionary_is_least_squares() {
        // exponential atoms on 3 samples: a full-rank square system
        let fam = ProfileFamily::new(ProfileKind::Exponential, vec![0.5, 1.0, 3.0]).unwrap();
        let d = build_dictionary(&fam, &TimeGrid::uniform(0.0, 1.0, 3).unwrap()).unwrap();
        let truth = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
        let x = &truth * d.atoms();
        let s = lasso(&x, &d, 0.0, &LassoOptions { tol: 1e-10, max_iters: Some(100_000) }).unwrap();
        let resid = (&x - &s.modes * d.atoms()).norm() / x.norm();
        assert!(resid <= 1e-8, "{resid}");
    }

    #[test]
    fn kkt_conditions_hold() {
        let d = dict(log_space(0.05, 1.0, 15), 10.0, 101);
        let truth = DMatrix::from_fn(4, 15, |i, j| if j == 3 { 1.0 + i as f64 } else if j == 11 { -0.5 } else { 0.0 });
        let x = &truth * d.atoms();
        let reg = 0.05 * reg_max(&x, &d);
        let s = lasso(&x, &d, reg, &LassoOptions::default()).unwrap();
        assert!(s.max_kkt_violation <= 1e-8);
        assert!(kkt_check(&x, &d, &s.normalized, reg) <= 1e-6);
    }

    #[test]
    fn two_atom_support_concentrates() {
        let lambdas = log_space(0.02, 1.0, 40);
        let d = dict(lambdas.clone(), 40.0, 201);
        let (a, b) = (8, 30);
        let truth = DMatrix::from_fn(3, 40, |i, j| match j {
            j if j == a => 1.0 + i as f64,
            j if j == b => 2.0 - i as f64 * 0.3,
            _ => 0.0,
        });
        let x = &truth * d.atoms();
        let rmax = reg_max(&x, &d);
        // at large reg the shrinkage favours compromise atoms; the support
        // settles onto the truth and its grid neighbours further down the path
        for frac in [0.03, 1e-2, 1e-3, 1e-4] {
            let s = lasso(&x, &d, frac * rmax, &LassoOptions::default()).unwrap();
            let support: Vec<usize> =
                (0..40).filter(|&j| s.modes.column(j).norm() > 0.0).collect();
            assert!(support.len() <= 4, "reg {frac}: {support:?}");
            assert!(support.iter().all(|&j| j.abs_diff(a) <= 1 || j.abs_diff(b) <= 1), "{support:?}");
        }
    }

    #[test]
    fn reg_max_gives_zero() {
        let d = dict(log_space(0.05, 1.0, 10), 10.0, 51);
        let x = DMatrix::from_fn(2, 51, |i, k| ((i + 1) as f64) * (1.0 - k as f64 / 60.0));
        let r = reg_max(&x, &d);
        let s = lasso(&x, &d, r, &LassoOptions::default()).unwrap();
        assert!(s.modes.iter().all(|&v| v == 0.0));
        let s = lasso(&x, &d, 0.9 * r, &LassoOptions::default()).unwrap();
        assert!(s.modes.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn no_convergence_is_reported() {
        let d = dict(log_space(0.05, 1.0, 30), 10.0, 101);
        let x = DMatrix::from_fn(1, 101, |_, k| (k as f64 * 0.37).sin());
        let r = lasso(&x, &d, 1e-6, &LassoOptions { tol: 1e-14, max_iters: Some(2) });
        assert!(matches!(r, Err(Error::NoConvergence { .. })));
    }
}
