//! Dynamic mode decomposition: snapshot matrices, truncated SVD, reduced
//! linear map, modes/eigenvalues/coefficients and reconstruction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvector matrices with a larger condition number are rejected.
pub const MAX_EIGENVECTOR_CONDITION: f64 = 1e12;

/// Relative imaginary residue tolerated in reconstructions of real data.
pub const IMAGINARY_TOL: f64 = 1e-8;

/// Truncation rule for the SVD of the first snapshot matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    Fixed(usize),
    /// Smallest rank whose singular values carry this fraction of `||X0||_F^2`.
    Energy(f64),
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Energy(0.9999)
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// N x r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// r values, descending.
    pub sigma: DVector<f64>,
    /// M x r, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

/// Shifted snapshot matrices `X0 = [x_0 .. x_{M-1}]`, `X1 = [x_1 .. x_M]`.
pub fn build_data_matrices(traj: &Trajectory) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if traj.len() < 3 {
        return Err(Error::TooFewSnapshots { got: traj.len() });
    }
    traj.grid().step()?;
    let m = traj.len() - 1;
    let x = traj.states();
    Ok((x.columns(0, m).into_owned(), x.columns(1, m).into_owned()))
}

pub fn truncated_svd(x0: &DMatrix<f64>, rule: RankRule) -> Result<TruncatedSvd> {
    let svd = x0.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::SingularData { condition: f64::INFINITY });
    }
    let tol = (x0.nrows().max(x0.ncols()) as f64) * f64::EPSILON * smax;
    let available = sigma.iter().filter(|&&s| s > tol).count();

    let r = match rule {
        RankRule::Fixed(r) => {
            if r == 0 || r > available {
                return Err(Error::RankTooLarge { requested: r, available });
            }
            r
        }
        RankRule::Energy(e) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::DomainError(format!("energy fraction {e} not in (0, 1]")));
            }
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            let mut r = sigma.len();
            for (i, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc >= e * total * (1.0 - 4.0 * f64::EPSILON) {
                    r = i + 1;
                    break;
                }
            }
            r.min(available)
        }
    };
    let cols: Vec<usize> = order[..r].to_vec();
    Ok(TruncatedSvd {
        u: u.select_columns(&cols),
        sigma: DVector::from_vec(sigma[..r].to_vec()),
        v: v_t.select_rows(&cols).transpose(),
    })
}

/// `F = argmin ||F C0 - C1||_F`, solved through the pseudo-inverse of `C0`.
pub fn fit_linear_map(c0: &DMatrix<f64>, c1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c0.shape() != c1.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", c0.shape()),
            found: format!("{:?}", c1.shape()),
        });
    }
    let s = linalg::singular_values(c0);
    let r = c0.nrows();
    // C0 C0^* has condition number cond(C0)^2
    let cond = if s.len() < r || s[r - 1] == 0.0 {
        f64::INFINITY
    } else {
        (s[0] / s[r - 1]).powi(2)
    };
    if cond > 1.0 / f64::EPSILON {
        return Err(Error::SingularData { condition: cond });
    }
    Ok(c1 * linalg::pinv(c0, 0.0))
}

#[derive(Debug, Clone)]
pub struct DmdResult {
    /// N x r.
    pub modes: DMatrix<Complex64>,
    /// Discrete-time eigenvalues of the reduced map.
    pub eigenvalues: DVector<Complex64>,
    pub coefficients: DVector<Complex64>,
    pub rank: usize,
    pub dt: f64,
}

pub fn dmd(traj: &Trajectory, rule: RankRule) -> Result<DmdResult> {
    let (x0, x1) = build_data_matrices(traj)?;
    let svd = truncated_svd(&x0, rule)?;
    let ut = svd.u.transpose();
    let c0 = &ut * &x0;
    let c1 = &ut * &x1;
    let f = fit_linear_map(&c0, &c1)?;
    let (mu, w) = linalg::eigen_decomposition(&f)?;
    let cond = linalg::complex_condition_number(&w);
    if cond > MAX_EIGENVECTOR_CONDITION {
        return Err(Error::DefectiveMap { condition: cond });
    }
    let u_c = svd.u.map(|v| Complex64::new(v, 0.0));
    let modes = &u_c * &w;
    let b: DVector<Complex64> = (&ut * traj.state(0)).map(|v| Complex64::new(v, 0.0));
    let coefficients = w
        .lu()
        .solve(&b)
        .ok_or(Error::DefectiveMap { condition: f64::INFINITY })?;
    Ok(DmdResult {
        modes,
        eigenvalues: mu,
        coefficients,
        rank: svd.rank(),
        dt: traj.grid().step()?,
    })
}

impl DmdResult {
    /// Continuous-time eigenvalues `ln(mu) / dt` (principal branch).
    pub fn continuous_eigenvalues(&self) -> DVector<Complex64> {
        self.eigenvalues.map(|m| m.ln() / self.dt)
    }

    fn reconstruct_complex(&self, k: i32) -> DVector<Complex64> {
        let weights = DVector::from_iterator(
            self.rank,
            self.coefficients.iter().zip(self.eigenvalues.iter()).map(|(a, m)| a * m.powi(k)),
        );
        &self.modes * weights
    }

    /// Rebuilds a trajectory on `grid` (column k uses step index k).
    pub fn reconstruct_trajectory(&self, grid: &TimeGrid) -> Result<Trajectory> {
        let cols = (0..grid.len())
            .map(|k| dmd_reconstruct(self, k))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(DMatrix::from_columns(&cols), grid.clone())
    }
}

/// `sum_i alpha_i mu_i^k phi_i`, returning the real part.
pub fn dmd_reconstruct(res: &DmdResult, k: usize) -> Result<DVector<f64>> {
    let z = res.reconstruct_complex(k as i32);
    let re = z.map(|c| c.re);
    let im = z.map(|c| c.im);
    let scale = re.norm().max(f64::MIN_POSITIVE);
    let residue = im.norm() / scale;
    if residue > IMAGINARY_TOL && im.norm() > f64::EPSILON {
        return Err(Error::ImaginaryResidue(residue));
    }
    Ok(re)
}

/// Relative Frobenius error plus per-snapshot L2 errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub relative_frobenius: f64,
    pub times: Vec<f64>,
    /// `||x_k - xhat_k||`.
    pub column_error: Vec<f64>,
    /// `||x_k||`.
    pub column_norm: Vec<f64>,
}

pub fn reconstruction_error(traj: &Trajectory, recon: &Trajectory) -> Result<ErrorReport> {
    let (a, b) = (traj.states(), recon.states());
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            found: format!("{:?}", b.shape()),
        });
    }
    let diff = a - b;
    let denom = a.norm();
    let relative_frobenius = if denom > 0.0 { diff.norm() / denom } else { diff.norm() };
    Ok(ErrorReport {
        relative_frobenius,
        times: traj.times().to_vec(),
        column_error: diff.column_iter().map(|c| c.norm()).collect(),
        column_norm: a.column_iter().map(|c| c.norm()).collect(),
    })
}

impl ErrorReport {
    /// CSV with header `t,error,norm`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["t", "error", "norm"]).map_err(err)?;
        for ((t, e), n) in self.times.iter().zip(&self.column_error).zip(&self.column_norm) {
            w.write_record([fmt_f64(*t), fmt_f64(*e), fmt_f64(*n)]).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let (mut times, mut column_error, mut column_norm) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |j: usize| -> Result<f64> {
                rec.get(j)
                    .ok_or_else(|| Error::Parse(format!("line {}: missing column {j}", i + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))
            };
            times.push(field(0)?);
            column_error.push(field(1)?);
            column_norm.push(field(2)?);
        }
        let num: f64 = column_error.iter().map(|e| e * e).sum::<f64>().sqrt();
        let den: f64 = column_norm.iter().map(|e| e * e).sum::<f64>().sqrt();
        Ok(Self {
            relative_frobenius: if den > 0.0 { num / den } else { num },
            times,
            column_error,
            column_norm,
        })
    }
}

/// JSON form of a [`DmdResult`]. Eigenvalues and coefficients are
/// `[re, im]` pairs of decimal strings; modes are row-major real/imag arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdResultJson {
    pub rank: usize,
    pub dt: f64,
    pub eigenvalues: Vec<[String; 2]>,
    pub coefficients: Vec<[String; 2]>,
    pub modes: ComplexMatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// `[re, im]` as decimal strings.
pub fn complex_pair(c: &Complex64) -> [String; 2] {
    [fmt_f64(c.re), fmt_f64(c.im)]
}

pub fn parse_complex_pair(p: &[String; 2]) -> Result<Complex64> {
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    Ok(Complex64::new(parse(&p[0])?, parse(&p[1])?))
}

impl From<&DmdResult> for DmdResultJson {
    fn from(r: &DmdResult) -> Self {
        let (rows, cols) = r.modes.shape();
        let row_major = |f: fn(&Complex64) -> f64| {
            (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|ij| f(&r.modes[ij])).collect()
        };
        Self {
            rank: r.rank,
            dt: r.dt,
            eigenvalues: r.eigenvalues.iter().map(complex_pair).collect(),
            coefficients: r.coefficients.iter().map(complex_pair).collect(),
            modes: ComplexMatrixJson { rows, cols, re: row_major(|c| c.re), im: row_major(|c| c.im) },
        }
    }
}

impl TryFrom<&DmdResultJson> for DmdResult {
    type Error = Error;

    fn try_from(j: &DmdResultJson) -> Result<Self> {
        let m = &j.modes;
        if m.re.len() != m.rows * m.cols || m.im.len() != m.rows * m.cols || m.cols != j.rank {
            return Err(Error::Parse("mode matrix size does not match rank".into()));
        }
        if j.eigenvalues.len() != j.rank || j.coefficients.len() != j.rank {
            return Err(Error::Parse("eigenvalue/coefficient count does not match rank".into()));
        }
        let modes = DMatrix::from_fn(m.rows, m.cols, |i, k| {
            Complex64::new(m.re[i * m.cols + k], m.im[i * m.cols + k])
        });
        let eigenvalues = j.eigenvalues.iter().map(parse_complex_pair).collect::<Result<Vec<_>>>()?;
        let coefficients = j.coefficients.iter().map(parse_complex_pair).collect::<Result<Vec<_>>>()?;
        Ok(DmdResult {
            modes,
            eigenvalues: DVector::from_vec(eigenvalues),
            coefficients: DVector::from_vec(coefficients),
            rank: j.rank,
            dt: j.dt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, linear_system, zero_homogeneous_trajectory};

    fn traj_from(cols: &[&[f64]], dt: f64) -> Trajectory {
        let n = cols[0].len();
        let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let g = TimeGrid::uniform(0.0, dt * (cols.len() - 1) as f64, cols.len()).unwrap();
        Trajectory::new(m, g).unwrap()
    }

    #[test]
    fn data_matrices_shift() {
        let t = traj_from(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], 1.0);
        let (x0, x1) = build_data_matrices(&t).unwrap();
        assert_eq!(x0, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(x1, DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 4.0, 6.0]));
        assert_eq!(x0.column(1), x1.column(0));
    }

    #[test]
    fn too_few_snapshots() {
        let t = traj_from(&[&[1.0], &[2.0]], 1.0);
        assert!(matches!(build_data_matrices(&t), Err(Error::TooFewSnapshots { got: 2 })));
    }

    #[test]
    fn svd_rank_one_exact() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 1.0, 4.0, 1.0]);
        let x = &u * v.transpose();
        let s = truncated_svd(&x, RankRule::Fixed(1)).unwrap();
        assert!((s.reconstruct() - &x).norm() <= 1e-12);
        assert!(matches!(truncated_svd(&x, RankRule::Fixed(2)), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn svd_energy_rule() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let s = truncated_svd(&x, RankRule::Energy(0.9)).unwrap();
        assert_eq!(s.rank(), 2);
        let resid = (s.reconstruct() - &x).norm_squared();
        assert!(resid <= (1.0 - 0.9) * x.norm_squared());
        let s = truncated_svd(&DMatrix::identity(3, 3), RankRule::Fixed(3)).unwrap();
        assert!(s.sigma.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let ortho = s.u.transpose() * &s.u;
        assert!((ortho - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn fit_linear_map_cases() {
        let c0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let f = fit_linear_map(&c0, &(&c0 * 2.0)).unwrap();
        assert!((f - DMatrix::identity(2, 2) * 2.0).norm() < 1e-12);

        let c1 = DMatrix::from_row_slice(2, 2, &[0.3, -4.0, 7.0, 1.5]);
        let f = fit_linear_map(&DMatrix::identity(2, 2), &c1).unwrap();
        assert!((f - &c1).norm() < 1e-12);

        let c1 = DMatrix::from_row_slice(2, 3, &[0.1, 0.7, -0.2, 0.9, 0.0, 1.1]);
        let f = fit_linear_map(&c0, &c1).unwrap();
        let orth = (&f * &c0 - &c1) * c0.transpose();
        assert!(orth.norm() < 1e-8);

        let singular = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(fit_linear_map(&singular, &singular), Err(Error::SingularData { .. })));
    }

    #[test]
    fn fit_linear_map_recovers_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let mut x = DVector::from_vec(vec![1.0, -0.5]);
        let mut cols = vec![x.clone()];
        for _ in 0..5 {
            x = &a * x;
            cols.push(x.clone());
        }
        let data = DMatrix::from_columns(&cols);
        let f = fit_linear_map(&data.columns(0, 5).into_owned(), &data.columns(1, 5).into_owned())
            .unwrap();
        let mut ef: Vec<_> = f.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
        let mut ea: Vec<_> = a.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
        ef.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ea.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (p, q) in ef.iter().zip(&ea) {
            assert!((p.0 - q.0).abs() < 1e-8 && (p.1 - q.1).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_geometric_sequence() {
        let t = traj_from(&[&[1.0], &[0.5], &[0.25], &[0.125]], 1.0);
        let r = dmd(&t, RankRule::Fixed(1)).unwrap();
        assert!((r.eigenvalues[0] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        assert!((dmd_reconstruct(&r, 0).unwrap()[0] - 1.0).abs() < 1e-10);
        assert!((dmd_reconstruct(&r, 3).unwrap()[0] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_explicit() {
        let r = DmdResult {
            modes: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            eigenvalues: DVector::from_element(1, Complex64::new(0.5, 0.0)),
            coefficients: DVector::from_element(1, Complex64::new(1.0, 0.0)),
            rank: 1,
            dt: 1.0,
        };
        assert_eq!(dmd_reconstruct(&r, 3).unwrap()[0], 0.125);
    }

    #[test]
    fn linear_flow_eigenvalues_match_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -1.5]);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let sys = linear_system(a.clone(), x0.clone()).unwrap();
        let dt = 0.1;
        let g = TimeGrid::uniform(0.0, 3.0, 31).unwrap();
        let t = sys.sample_closed_form(&g).unwrap().unwrap();
        let r = dmd(&t, RankRule::Fixed(2)).unwrap();
        let step = (&a * dt).exp();
        let mut want: Vec<f64> = step.complex_eigenvalues().iter().map(|c| c.re).collect();
        let mut got: Vec<f64> = r.eigenvalues.iter().map(|c| c.re).collect();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
        let recon = r.reconstruct_trajectory(&g).unwrap();
        assert!(reconstruction_error(&t, &recon).unwrap().relative_frobenius < 1e-6);
        // integrated data: same spectrum to integrator accuracy
        let ti = integrate(&sys, &x0, &g).unwrap();
        let ri = dmd(&ti, RankRule::Fixed(2)).unwrap();
        assert!(ri.eigenvalues.iter().all(|m| want.iter().any(|w| (m.re - w).abs() < 1e-6)));
    }

    #[test]
    fn zero_homogeneous_is_not_captured() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let mut errs = Vec::new();
        for samples in [11, 101, 1001] {
            let g = TimeGrid::uniform(0.0, 0.9, samples).unwrap();
            let t = zero_homogeneous_trajectory(&v, 1.0, &g).unwrap();
            let r = dmd(&t, RankRule::Fixed(1)).unwrap();
            let recon = r.reconstruct_trajectory(&g).unwrap();
            errs.push(reconstruction_error(&t, &recon).unwrap().relative_frobenius);
        }
        assert!(errs.iter().all(|&e| e > 1e-2), "{errs:?}");
        // refining the step does not help
        assert!(errs[2] > 0.5 * errs[0], "{errs:?}");
    }

    #[test]
    fn error_report_cases() {
        let t = traj_from(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], 1.0);
        assert_eq!(reconstruction_error(&t, &t).unwrap().relative_frobenius, 0.0);
        let zero = Trajectory::new(DMatrix::zeros(2, 3), t.grid().clone()).unwrap();
        assert_eq!(reconstruction_error(&t, &zero).unwrap().relative_frobenius, 1.0);
        let e = DMatrix::from_row_slice(2, 3, &[5.0, 1.0, 3.0, 6.0, 4.0, 2.0]);
        let pert = t.states() + &e * (0.01 * t.states().norm() / e.norm());
        let p = Trajectory::new(pert, t.grid().clone()).unwrap();
        assert!((reconstruction_error(&t, &p).unwrap().relative_frobenius - 0.01).abs() < 1e-14);
        let other = traj_from(&[&[1.0], &[3.0], &[5.0]], 1.0);
        assert!(matches!(reconstruction_error(&t, &other), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn error_csv_round_trip() {
        let t = traj_from(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], 0.5);
        let zero = Trajectory::new(DMatrix::zeros(2, 3), t.grid().clone()).unwrap();
        let rep = reconstruction_error(&t, &zero).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let back = ErrorReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, rep.times);
        assert!((back.relative_frobenius - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let t = traj_from(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]], 1.0);
        let r = dmd(&t, RankRule::Fixed(2)).unwrap();
        let j = DmdResultJson::from(&r);
        let text = serde_json::to_string(&j).unwrap();
        let back: DmdResultJson = serde_json::from_str(&text).unwrap();
        let r2 = DmdResult::try_from(&back).unwrap();
        assert_eq!(r2.eigenvalues, r.eigenvalues);
        assert_eq!(r2.modes, r.modes);
        assert_eq!(r2.coefficients, r.coefficients);
    }
}
