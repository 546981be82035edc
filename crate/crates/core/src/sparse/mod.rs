//! Sparse mode recovery over a profile dictionary: Lasso by coordinate
//! descent followed by the prune-and-refit selection loop.

mod lasso;
mod refit;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use lasso::{kkt_check, lasso, reg_max, LassoOptions, LassoSolution};
pub use refit::{
    prune_and_refit, sparse_reconstruct, Candidate, RefitOptions, SparseDecomposition,
    SparseDecompositionJson, MAX_REFIT_CONDITION, PINV_CUTOFF,
};

use crate::error::{Error, Result};
use crate::profiles::ProfileDictionary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub points: usize,
    /// The sweep runs from `reg_max` down this many decades.
    pub decades: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { points: 10, decades: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SparseOptions {
    pub lasso: LassoOptions,
    pub refit: RefitOptions,
    /// Fixed regularization; when absent it is picked from a sweep.
    pub reg: Option<f64>,
    pub sweep: SweepOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub reg: f64,
    /// Nonzero Lasso mode columns.
    pub lasso_support: usize,
    pub selected: Vec<usize>,
    /// Relative residual after refit (1 when nothing was selected).
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SparseFit {
    pub decomposition: SparseDecomposition,
    pub lasso: LassoSolution,
    pub sweep: Vec<SweepEntry>,
    /// Index of the chosen sweep entry, if a sweep ran.
    pub chosen: Option<usize>,
}

/// Regularization values `reg_max * 10^(-decades * i / (points - 1))`.
pub fn sweep_values(reg_max: f64, opts: &SweepOptions) -> Vec<f64> {
    if opts.points <= 1 {
        return vec![reg_max];
    }
    (0..opts.points)
        .map(|i| reg_max * 10f64.powf(-opts.decades * i as f64 / (opts.points - 1) as f64))
        .collect()
}

/// Knee of the residual-versus-support curve.
///
/// For each support size only the entry with the lowest residual is kept
/// (the larger regularization on ties). With support size and log residual
/// both scaled to `[0, 1]`,
/// the knee is the point lying furthest below the chord joining the smallest
/// and largest supports. A curve with no point strictly below the chord falls
/// back to the lowest nonempty residual.
pub fn knee(entries: &[SweepEntry]) -> Option<usize> {
    let mut curve: Vec<(usize, usize)> = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let s = e.selected.len();
        match curve.iter_mut().find(|(sz, _)| *sz == s) {
            Some(slot) => {
                if e.residual < entries[slot.1].residual {
                    slot.1 = i;
                }
            }
            None => curve.push((s, i)),
        }
    }
    curve.sort_unstable();
    let nonempty: Vec<(usize, usize)> = curve.iter().copied().filter(|&(s, _)| s > 0).collect();
    let fallback = nonempty
        .iter()
        .min_by(|a, b| entries[a.1].residual.total_cmp(&entries[b.1].residual).then(a.0.cmp(&b.0)))
        .map(|&(_, i)| i);
    if curve.len() < 3 {
        return fallback;
    }
    let (s0, i0) = curve[0];
    let (s1, i1) = curve[curve.len() - 1];
    let logr = |i: usize| entries[i].residual.max(f64::MIN_POSITIVE).ln();
    let r: Vec<f64> = curve.iter().map(|&(_, i)| logr(i)).collect();
    let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(rmax > rmin) {
        return fallback;
    }
    let xs = |s: usize| (s - s0) as f64 / (s1 - s0) as f64;
    let ys = |v: f64| (v - rmin) / (rmax - rmin);
    let (y0, y1) = (ys(logr(i0)), ys(logr(i1)));
    let mut best: Option<(f64, usize)> = None;
    for &(s, i) in nonempty.iter() {
        let x = xs(s);
        let gap = y0 + (y1 - y0) * x - ys(logr(i));
        if gap > 0.0 && best.map_or(true, |(g, _)| gap > g) {
            best = Some((gap, i));
        }
    }
    best.map(|(_, i)| i).or(fallback)
}

/// Lasso plus prune-and-refit. With `opts.reg` unset, a warm-started sweep
/// from `reg_max` picks the regularization at the knee.
pub fn decompose(x: &DMatrix<f64>, dict: &ProfileDictionary, opts: &SparseOptions) -> Result<SparseFit> {
    let problem = lasso::LassoProblem::new(dict);
    if let Some(reg) = opts.reg {
        let sol = problem.solve(x, reg, &opts.lasso, None)?;
        let dec = prune_and_refit(x, dict, &sol.modes, reg, &opts.refit)?;
        return Ok(SparseFit { decomposition: dec, lasso: sol, sweep: Vec::new(), chosen: None });
    }

    let regs = sweep_values(reg_max(x, dict), &opts.sweep);
    let mut fits: Vec<(LassoSolution, Option<SparseDecomposition>)> = Vec::with_capacity(regs.len());
    let mut entries = Vec::with_capacity(regs.len());
    let mut warm: Option<DMatrix<f64>> = None;
    for &reg in &regs {
        let sol = problem.solve(x, reg, &opts.lasso, warm.as_ref())?;
        let support = sol.modes.column_iter().filter(|c| c.norm() > 0.0).count();
        let dec = match prune_and_refit(x, dict, &sol.modes, reg, &opts.refit) {
            Ok(d) => Some(d),
            Err(Error::EmptySupport) => None,
            Err(e) => return Err(e),
        };
        entries.push(SweepEntry {
            reg,
            lasso_support: support,
            selected: dec.as_ref().map(|d| d.selected_atoms.clone()).unwrap_or_default(),
            residual: dec.as_ref().map_or(1.0, |d| d.residual),
        });
        warm = Some(sol.normalized.clone());
        fits.push((sol, dec));
    }
    let chosen = knee(&entries).ok_or(Error::EmptySupport)?;
    let (sol, dec) = fits.swap_remove(chosen);
    let dec = dec.ok_or(Error::EmptySupport)?;
    log::info!(
        "regularization {:e} chosen from sweep: {} atoms, residual {:e}",
        entries[chosen].reg,
        dec.sparsity(),
        dec.residual
    );
    Ok(SparseFit { decomposition: dec, lasso: sol, sweep: entries, chosen: Some(chosen) })
}
