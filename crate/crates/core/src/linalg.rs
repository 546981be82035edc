//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

pub fn complex_singular_values(m: &DMatrix<Complex64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

/// 2-norm condition number; infinite when the smallest singular value is zero.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    cond_from(&singular_values(m))
}

pub fn complex_condition_number(m: &DMatrix<Complex64>) -> f64 {
    cond_from(&complex_singular_values(m))
}

fn cond_from(s: &DVector<f64>) -> f64 {
    match (s.iter().next(), s.iter().last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(s: &DVector<f64>, rel_tol: f64) -> usize {
    match s.iter().next() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v > rel_tol * max).count(),
        _ => 0,
    }
}

/// Moore-Penrose pseudo-inverse, discarding singular values below `rel_cutoff * sigma_max`.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_cutoff * smax && s > 0.0 {
            out += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// Eigen-decomposition `F = W D W^{-1}` of a small real matrix.
///
/// Eigenvalues are ordered by decreasing modulus, ties broken by argument.
/// Each eigenvector is taken from the null space of `F - mu I`; eigenvalues that
/// agree to `1e-10` relative are grouped so a repeated semisimple eigenvalue
/// receives a full eigenbasis. A group whose null space is too small (Jordan
/// structure) yields `DefectiveMap`. Columns of `W` have unit norm.
pub fn eigen_decomposition(f: &DMatrix<f64>) -> Result<(DVector<Complex64>, DMatrix<Complex64>)> {
    let n = f.nrows();
    let mut mus: Vec<Complex64> = f.complex_eigenvalues().iter().copied().collect();
    mus.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.arg().total_cmp(&b.arg())));

    let null_tol = f64::EPSILON.sqrt() * f.norm().max(f64::MIN_POSITIVE);
    let fc: DMatrix<Complex64> = f.map(|v| Complex64::new(v, 0.0));
    let mut values = Vec::with_capacity(n);
    let mut vectors: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (mus[j] - mus[i]).norm() <= 1e-10 * mus[i].norm().max(1.0) {
            j += 1;
        }
        let k = j - i;
        let mean = mus[i..j].iter().sum::<Complex64>() / k as f64;
        let shifted = &fc - DMatrix::<Complex64>::identity(n, n) * mean;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        if k > 1 && svd.singular_values[order[k - 1]] > null_tol {
            return Err(Error::DefectiveMap { condition: f64::INFINITY });
        }
        for &row in order.iter().take(k) {
            let v: DVector<Complex64> = v_t.row(row).adjoint();
            let norm = v.norm();
            vectors.push(v / Complex64::new(norm, 0.0));
        }
        values.extend_from_slice(&mus[i..j]);
        i = j;
    }
    Ok((DVector::from_vec(values), DMatrix::from_columns(&vectors)))
}

/// Least-squares solution of `a x = b`, requiring numerical full column rank.
pub fn lstsq_complex(
    a: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
    rank_tol: f64,
) -> Result<DVector<Complex64>> {
    let rank = numerical_rank(&complex_singular_values(a), rank_tol);
    if rank < a.ncols() {
        return Err(Error::RankDeficientJacobian { rank, required: a.ncols() });
    }
    a.clone()
        .svd(true, true)
        .solve(b, 0.0)
        .map_err(|e| Error::DomainError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert_eq!(singular_values(&m).as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(condition_number(&m), 3.0);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, 1e-12);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
    }

    #[test]
    fn eigen_rotation() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let (mu, w) = eigen_decomposition(&f).unwrap();
        let fc = f.map(|v| Complex64::new(v, 0.0));
        for i in 0..2 {
            let r = &fc * w.column(i) - w.column(i) * mu[i];
            assert!(r.norm() < 1e-12);
            assert!((mu[i].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_repeated_semisimple() {
        let f = DMatrix::<f64>::identity(3, 3) * 0.5;
        let (mu, w) = eigen_decomposition(&f).unwrap();
        assert!(mu.iter().all(|m| (m - Complex64::new(0.5, 0.0)).norm() < 1e-14));
        assert!(complex_condition_number(&w) < 1.0 + 1e-10);
    }

    #[test]
    fn eigen_defective_has_singular_basis() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(eigen_decomposition(&f), Err(Error::DefectiveMap { .. })));
        // perturbed Jordan block: distinct eigenvalues, nearly parallel eigenvectors
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1e-14, 1.0]);
        let (_, w) = eigen_decomposition(&g).unwrap();
        assert!(complex_condition_number(&w) > 1e6);
    }
}
