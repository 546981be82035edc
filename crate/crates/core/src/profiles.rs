//! Overcomplete dictionaries of monotone decay profiles `a_lambda(t)` and
//! their per-atom inverse time mappings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `exp(-lambda t)`
    Exponential,
    /// `(1 - lambda t)_+`
    TruncatedLinear,
    /// `(1 - lambda t)_+^p`
    TruncatedPower { p: f64 },
}

impl ProfileKind {
    pub fn eval(&self, lambda: f64, t: f64) -> f64 {
        match *self {
            ProfileKind::Exponential => (-lambda * t).exp(),
            ProfileKind::TruncatedLinear => ramp(lambda, t),
            ProfileKind::TruncatedPower { p } => {
                let r = ramp(lambda, t);
                if r > 0.0 {
                    r.powf(p)
                } else {
                    0.0
                }
            }
        }
    }

    /// Time at which the profile reaches zero, if it does.
    pub fn extinction_time(&self, lambda: f64) -> Option<f64> {
        match self {
            ProfileKind::Exponential => None,
            _ => Some(1.0 / lambda),
        }
    }

    /// Inverse of `t -> a_lambda(t)` on the pre-extinction range `0 < value <= 1`.
    pub fn inverse(&self, lambda: f64, value: f64) -> Result<f64> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::OutOfRange { value, atom: None });
        }
        Ok(match *self {
            ProfileKind::Exponential => -value.ln() / lambda,
            ProfileKind::TruncatedLinear => (1.0 - value) / lambda,
            ProfileKind::TruncatedPower { p } => (1.0 - value.powf(1.0 / p)) / lambda,
        })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ProfileKind::TruncatedPower { p } if !(p > 0.0 && p.is_finite()) => {
                Err(Error::DegenerateFamily(format!("power must be positive, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

fn ramp(lambda: f64, t: f64) -> f64 {
    let r = 1.0 - lambda * t;
    if r > 0.0 {
        r
    } else {
        0.0
    }
}

/// A profile kind together with an ascending grid of rates `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFamily {
    pub kind: ProfileKind,
    lambdas: Vec<f64>,
}

impl ProfileFamily {
    pub fn new(kind: ProfileKind, lambdas: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        if lambdas.is_empty() {
            return Err(Error::DegenerateFamily("empty rate grid".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::DegenerateFamily(format!("rate {l} is not positive")));
        }
        if let Some(w) = lambdas.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateFamily(format!(
                "rates must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { kind, lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Index of the rate closest to `lambda`.
    pub fn nearest(&self, lambda: f64) -> usize {
        let mut best = 0;
        for (i, l) in self.lambdas.iter().enumerate() {
            if (l - lambda).abs() < (self.lambdas[best] - lambda).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    #[default]
    Log,
}

/// Serializable description of a dictionary's rate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    #[serde(flatten)]
    pub kind: ProfileKind,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Number of grid rates; defaults to 60 per decade for log spacing.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
    /// Extra rates merged into the grid, each replacing its nearest neighbour.
    #[serde(default)]
    pub include: Vec<f64>,
}

impl DictionarySpec {
    pub const PER_DECADE: f64 = 60.0;

    pub fn family(&self) -> Result<ProfileFamily> {
        let (lo, hi) = (self.lambda_min, self.lambda_max);
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::DegenerateFamily(format!("bad rate range [{lo}, {hi}]")));
        }
        let count = match (self.count, self.spacing) {
            (Some(c), _) => c,
            (None, Spacing::Log) => ((hi / lo).log10() * Self::PER_DECADE).round() as usize + 1,
            (None, Spacing::Linear) => {
                return Err(Error::DegenerateFamily("linear spacing needs a count".into()))
            }
        };
        let mut lambdas = match self.spacing {
            Spacing::Log => log_space(lo, hi, count),
            Spacing::Linear => lin_space(lo, hi, count),
        };
        for &extra in &self.include {
            if !(extra > 0.0) {
                return Err(Error::DegenerateFamily(format!("included rate {extra} not positive")));
            }
            let i = nearest_index(&lambdas, extra);
            lambdas[i] = extra;
        }
        lambdas.sort_by(f64::total_cmp);
        ProfileFamily::new(self.kind, lambdas)
    }
}

fn nearest_index(xs: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if (v - x).abs() < (xs[best] - x).abs() {
            best = i;
        }
    }
    best
}

pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> =
        (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect();
    v[0] = lo;
    v[count - 1] = hi;
    v
}

pub fn lin_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let mut v: Vec<f64> = (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect();
    v[count - 1] = hi;
    v
}

/// Atom matrix: row `i` is `a_{lambda_i}` sampled on the grid.
#[derive(Debug, Clone)]
pub struct ProfileDictionary {
    pub family: ProfileFamily,
    pub grid: TimeGrid,
    atoms: DMatrix<f64>,
    norms: DVector<f64>,
}

pub fn build_dictionary(family: &ProfileFamily, grid: &TimeGrid) -> Result<ProfileDictionary> {
    let lambdas = family.lambdas();
    let t = grid.points();
    let atoms = DMatrix::from_fn(lambdas.len(), t.len(), |i, k| family.kind.eval(lambdas[i], t[k]));
    // Atoms are monotone in lambda at every t, so only neighbours can coincide.
    for i in 1..lambdas.len() {
        if atoms.row(i) == atoms.row(i - 1) {
            return Err(Error::DegenerateFamily(format!(
                "atoms for rates {} and {} coincide on this grid",
                lambdas[i - 1],
                lambdas[i]
            )));
        }
    }
    let norms = DVector::from_iterator(atoms.nrows(), atoms.row_iter().map(|r| r.norm()));
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateFamily(format!("atom {} is identically zero", lambdas[i])));
    }
    Ok(ProfileDictionary { family: family.clone(), grid: grid.clone(), atoms, norms })
}

impl ProfileDictionary {
    /// (L + 1) x (M + 1) unnormalized atoms.
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Euclidean norm of each atom row.
    pub fn norms(&self) -> &DVector<f64> {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.family.lambdas()[i]
    }

    /// Atoms scaled to unit norm.
    pub fn normalized_atoms(&self) -> DMatrix<f64> {
        let mut a = self.atoms.clone();
        for (mut row, n) in a.row_iter_mut().zip(self.norms.iter()) {
            row /= *n;
        }
        a
    }

    /// Rows `indices` of the unnormalized atom matrix.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        self.atoms.select_rows(indices)
    }

    /// Largest absolute inner product between two distinct normalized atoms.
    pub fn coherence(&self) -> f64 {
        let a = self.normalized_atoms();
        let g = &a * a.transpose();
        let mut mu: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..i {
                mu = mu.max(g[(i, j)].abs());
            }
        }
        mu
    }
}

/// `t = xi_lambda(value)` for one atom of `family`.
pub fn atom_inverse(family: &ProfileFamily, lambda: f64, value: f64) -> Result<f64> {
    family.kind.inverse(lambda, value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseReport {
    pub times: Vec<f64>,
    /// Largest minus smallest recovered time across atoms.
    pub spread: f64,
}

/// Element-wise inverse over selected atoms, reporting how far the recovered times disagree.
pub fn dictionary_inverse(
    dict: &ProfileDictionary,
    selected: &[usize],
    values: &[f64],
) -> Result<InverseReport> {
    if selected.len() != values.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", selected.len()),
            found: format!("{}", values.len()),
        });
    }
    let times = selected
        .iter()
        .zip(values)
        .map(|(&i, &v)| {
            atom_inverse(&dict.family, dict.lambda(i), v).map_err(|_| Error::OutOfRange {
                value: v,
                atom: Some(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(InverseReport { spread: if times.is_empty() { 0.0 } else { hi - lo }, times })
}
