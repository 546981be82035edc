use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::fmt_f64;
use crate::error::{Error, Result};
use crate::linalg;
use crate::profiles::{ProfileDictionary, ProfileKind};

/// Candidate supports whose `D D^T` exceeds this condition number are skipped.
pub const MAX_REFIT_CONDITION: f64 = 1e12;
/// Singular-value cutoff (relative to the largest) in the refit pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitOptions {
    /// Candidates whose squared error is at most
    /// `min * (1 + rel_tie) + tie_tol * ||X||_F^2` are treated as tied with the
    /// minimum; the smallest tied support wins.
    pub tie_tol: f64,
    pub rel_tie: f64,
}

impl Default for RefitOptions {
    fn default() -> Self {
        Self { tie_tol: 1e-10, rel_tie: 0.0 }
    }
}

/// One support visited by the drop loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub atoms: Vec<usize>,
    /// `||X - V D||_F^2`, absent when the refit was skipped as ill-conditioned.
    pub squared_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SparseDecomposition {
    /// Atom indices into the parent dictionary, ascending.
    pub selected_atoms: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub kind: ProfileKind,
    /// N x s; column j pairs with `selected_atoms[j]`.
    pub modes: DMatrix<f64>,
    /// s x (M + 1) selected unnormalized atoms.
    pub refit_dictionary: DMatrix<f64>,
    /// `||X - V D||_F / ||X||_F`.
    pub residual: f64,
    pub reg: f64,
    pub candidates: Vec<Candidate>,
}

fn refit(x: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    x * linalg::pinv(d, PINV_CUTOFF)
}

fn relative(x: &DMatrix<f64>, err: f64) -> f64 {
    let n = x.norm();
    if n > 0.0 {
        err / n
    } else {
        err
    }
}

/// Prune-and-refit selection over the support of a Lasso solution.
///
/// Support atoms are ordered by ascending mode norm. Starting from the full
/// support, each step refits `V = X D^T (D D^T)^{-1}`, records the error, and
/// drops the first (smallest-norm) atom, until nothing is left. The order is
/// fixed after the initial sort. The support with minimum recorded error is
/// refit once more and returned.
pub fn prune_and_refit(
    x: &DMatrix<f64>,
    dict: &ProfileDictionary,
    modes: &DMatrix<f64>,
    reg: f64,
    opts: &RefitOptions,
) -> Result<SparseDecomposition> {
    if modes.ncols() != dict.len() || modes.nrows() != x.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {}", x.nrows(), dict.len()),
            found: format!("{} x {}", modes.nrows(), modes.ncols()),
        });
    }
    let norms: Vec<f64> = modes.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..dict.len()).filter(|&j| norms[j] > 0.0).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));

    let mut candidates = Vec::with_capacity(order.len());
    for start in 0..order.len() {
        let atoms = order[start..].to_vec();
        let d = dict.select(&atoms);
        let cond = linalg::condition_number(&d).powi(2);
        let squared_error = if cond > MAX_REFIT_CONDITION {
            log::warn!("skipping support of {} atoms: refit condition number {cond:e}", atoms.len());
            None
        } else {
            let v = refit(x, &d);
            Some((x - v * d).norm_squared())
        };
        candidates.push(Candidate { atoms, squared_error });
    }

    let best = candidates
        .iter()
        .filter_map(|c| c.squared_error)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::EmptySupport);
    }
    let slack = best * opts.rel_tie + opts.tie_tol * x.norm_squared();
    // later candidates are strictly smaller supports
    let chosen = candidates
        .iter()
        .rev()
        .find(|c| c.squared_error.is_some_and(|e| e <= best + slack))
        .expect("best candidate exists");

    let mut selected = chosen.atoms.clone();
    selected.sort_unstable();
    let d = dict.select(&selected);
    let v = refit(x, &d);
    let residual = relative(x, (x - &v * &d).norm());
    Ok(SparseDecomposition {
        lambdas: selected.iter().map(|&i| dict.lambda(i)).collect(),
        selected_atoms: selected,
        kind: dict.family.kind,
        modes: v,
        refit_dictionary: d,
        residual,
        reg,
        candidates,
    })
}

/// `X_hat = V D`.
pub fn sparse_reconstruct(dec: &SparseDecomposition) -> DMatrix<f64> {
    &dec.modes * &dec.refit_dictionary
}

impl SparseDecomposition {
    /// Rebuilds a decomposition from its stored modes and a dictionary.
    pub fn from_parts(
        x: &DMatrix<f64>,
        dict: &ProfileDictionary,
        selected_atoms: Vec<usize>,
        modes: DMatrix<f64>,
        reg: f64,
    ) -> Result<Self> {
        let d = dict.select(&selected_atoms);
        if modes.ncols() != d.nrows() || modes.nrows() != x.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {}", x.nrows(), d.nrows()),
                found: format!("{} x {}", modes.nrows(), modes.ncols()),
            });
        }
        let residual = relative(x, (x - &modes * &d).norm());
        Ok(Self {
            lambdas: selected_atoms.iter().map(|&i| dict.lambda(i)).collect(),
            selected_atoms,
            kind: dict.family.kind,
            modes,
            refit_dictionary: d,
            residual,
            reg,
            candidates: Vec::new(),
        })
    }

    pub fn sparsity(&self) -> usize {
        self.selected_atoms.len()
    }

    /// Writes one mode per column, headed by its rate.
    pub fn write_modes_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(self.lambdas.iter().map(|l| format!("lambda={}", fmt_f64(*l))))
            .map_err(err)?;
        for row in self.modes.row_iter() {
            w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON form of a [`SparseDecomposition`]; `modes` is row-major N x s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDecompositionJson {
    pub profile: ProfileKind,
    pub atom_indices: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub residual: f64,
    pub reg: f64,
    pub rows: usize,
    pub cols: usize,
    pub modes: Vec<f64>,
}

impl From<&SparseDecomposition> for SparseDecompositionJson {
    fn from(d: &SparseDecomposition) -> Self {
        let (rows, cols) = d.modes.shape();
        Self {
            profile: d.kind,
            atom_indices: d.selected_atoms.clone(),
            lambdas: d.lambdas.clone(),
            residual: d.residual,
            reg: d.reg,
            rows,
            cols,
            modes: (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|ij| d.modes[ij]).collect(),
        }
    }
}

impl SparseDecompositionJson {
    pub fn modes_matrix(&self) -> Result<DMatrix<f64>> {
        if self.modes.len() != self.rows * self.cols || self.lambdas.len() != self.cols {
            return Err(Error::Parse("mode matrix size does not match its header".into()));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.modes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeGrid;
    use crate::profiles::{build_dictionary, log_space, ProfileFamily};

    fn dict() -> ProfileDictionary {
        let fam = ProfileFamily::new(ProfileKind::TruncatedLinear, log_space(0.05, 1.0, 12)).unwrap();
        build_dictionary(&fam, &TimeGrid::uniform(0.0, 20.0, 101).unwrap()).unwrap()
    }

    #[test]
    fn single_atom_selected() {
        let d = dict();
        let v = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = &v * d.atoms().row(5);
        let mut lasso_v = DMatrix::zeros(3, 12);
        lasso_v.set_column(5, &(&v * 0.9));
        let dec = prune_and_refit(&x, &d, &lasso_v, 0.0, &RefitOptions::default()).unwrap();
        assert_eq!(dec.selected_atoms, vec![5]);
        assert!(dec.residual <= 1e-8);
        assert!((dec.modes.column(0) - &v).norm() < 1e-10);
        let outer = &v * d.atoms().row(5);
        assert!((sparse_reconstruct(&dec) - outer).norm() < 1e-10);
    }

    #[test]
    fn spurious_columns_pruned() {
        let d = dict();
        let truth = DMatrix::from_fn(4, 12, |i, j| match j {
            3 => 1.0 + i as f64,
            9 => (i as f64 - 1.5) * 0.7,
            _ => 0.0,
        });
        let x = &truth * d.atoms();
        let mut lasso_v = &truth * 0.8;
        lasso_v.set_column(1, &nalgebra::DVector::from_element(4, 1e-3));
        lasso_v.set_column(6, &nalgebra::DVector::from_element(4, -2e-3));
        let dec = prune_and_refit(&x, &d, &lasso_v, 0.1, &RefitOptions::default()).unwrap();
        assert_eq!(dec.selected_atoms, vec![3, 9]);
        assert!(dec.residual <= 1e-3);
        // the drop loop visits supports of size 4, 3, 2, 1
        let sizes: Vec<usize> = dec.candidates.iter().map(|c| c.atoms.len()).collect();
        assert_eq!(sizes, vec![4, 3, 2, 1]);
        assert_eq!(dec.candidates[0].atoms[..2], [1, 6]);
    }

    #[test]
    fn empty_support_is_an_error() {
        let d = dict();
        let x = DMatrix::from_element(2, 101, 1.0);
        let r = prune_and_refit(&x, &d, &DMatrix::zeros(2, 12), 0.0, &RefitOptions::default());
        assert!(matches!(r, Err(Error::EmptySupport)));
    }

    #[test]
    fn stored_residual_matches_pieces() {
        let d = dict();
        let x = DMatrix::from_fn(3, 101, |i, k| ((i + k) as f64 * 0.1).cos());
        let lasso_v = DMatrix::from_fn(3, 12, |i, j| ((i * 12 + j) % 5) as f64 - 2.0);
        let dec = prune_and_refit(&x, &d, &lasso_v, 0.0, &RefitOptions::default()).unwrap();
        let recomputed = (&x - sparse_reconstruct(&dec)).norm() / x.norm();
        assert!((recomputed - dec.residual).abs() <= 1e-12);
    }

    #[test]
    fn json_and_csv() {
        let d = dict();
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0]);
        let x = &v * d.atoms().row(2);
        let mut lv = DMatrix::zeros(2, 12);
        lv.set_column(2, &v);
        let dec = prune_and_refit(&x, &d, &lv, 0.5, &RefitOptions::default()).unwrap();
        let j = SparseDecompositionJson::from(&dec);
        let back: SparseDecompositionJson = serde_json::from_str(&serde_json::to_string(&j).unwrap()).unwrap();
        assert_eq!(back, j);
        assert_eq!(back.modes_matrix().unwrap(), dec.modes);
        let mut buf = Vec::new();
        dec.write_modes_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("lambda="));
    }
}
