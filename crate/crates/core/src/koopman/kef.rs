use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{ProfileFamily, ProfileKind};

pub type Evaluator = Arc<dyn Fn(&DVector<f64>) -> Result<Complex64> + Send + Sync>;

/// Where an eigenfunction came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Mapping {
        alpha: f64,
        beta: f64,
        profile: ProfileKind,
        lambda_atom: f64,
        mode: Vec<f64>,
    },
    Analytic {
        label: String,
    },
    Generated {
        op: FamilyOp,
        parents: Vec<Provenance>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FamilyOp {
    Scale { factor: f64 },
    Power { re: f64, im: f64 },
    Product { n: f64, m: f64 },
    Combine { re: f64, im: f64 },
}

/// A Koopman eigenfunction: `d/dt phi(x(t)) = lambda phi(x(t))` along the
/// flow it was built for.
#[derive(Clone)]
pub struct Kef {
    eigenvalue: Complex64,
    evaluator: Evaluator,
    provenance: Provenance,
}

impl fmt::Debug for Kef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kef")
            .field("eigenvalue", &self.eigenvalue)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl Kef {
    pub fn new<F>(eigenvalue: Complex64, provenance: Provenance, evaluator: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<Complex64> + Send + Sync + 'static,
    {
        Self { eigenvalue, evaluator: Arc::new(evaluator), provenance }
    }

    pub fn analytic<F>(label: impl Into<String>, eigenvalue: Complex64, evaluator: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<Complex64> + Send + Sync + 'static,
    {
        Self::new(eigenvalue, Provenance::Analytic { label: label.into() }, evaluator)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<Complex64> {
        (self.evaluator)(x)
    }

    pub fn eigenvalue(&self) -> Complex64 {
        self.eigenvalue
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Ordered eigenfunctions with the diagonal of their eigenvalues.
#[derive(Debug, Clone, Default)]
pub struct KefVector {
    entries: Vec<Kef>,
}

impl KefVector {
    pub fn new(entries: Vec<Kef>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Kef] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, kef: Kef) {
        self.entries.push(kef);
    }

    pub fn eigenvalues(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(Kef::eigenvalue))
    }

    /// `Lambda = diag(lambda_1, ..., lambda_L)`.
    pub fn lambda_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&self.eigenvalues())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<Complex64>> {
        let vals = self.entries.iter().map(|k| k.eval(x)).collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }
}

/// `phi(x) = exp(alpha * xi(<mode, x> / |mode|^2) + beta)` where `xi` inverts
/// the atom with rate `lambda_atom`. The eigenvalue is `alpha`.
pub fn kef_from_mapping(
    family: &ProfileFamily,
    lambda_atom: f64,
    mode: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<Kef> {
    let norm2 = mode.norm_squared();
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return Err(Error::DomainError("mode must be nonzero and finite".into()));
    }
    if !(lambda_atom > 0.0) || !lambda_atom.is_finite() {
        return Err(Error::DomainError(format!("atom rate must be positive, got {lambda_atom}")));
    }
    let kind = family.kind;
    let provenance = Provenance::Mapping {
        alpha,
        beta,
        profile: kind,
        lambda_atom,
        mode: mode.as_slice().to_vec(),
    };
    let mode = mode.clone();
    Ok(Kef::new(Complex64::new(alpha, 0.0), provenance, move |x| {
        if x.len() != mode.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("state of length {}", mode.len()),
                found: format!("{}", x.len()),
            });
        }
        let t = kind.inverse(lambda_atom, mode.dot(x) / norm2)?;
        Ok(Complex64::new((alpha * t + beta).exp(), 0.0))
    }))
}

/// Principal-branch power; integer exponents go through repeated products.
fn cpow(z: Complex64, a: Complex64) -> Complex64 {
    if a == Complex64::new(0.0, 0.0) {
        return Complex64::new(1.0, 0.0);
    }
    if a.im == 0.0 && a.re.fract() == 0.0 && a.re.abs() <= 64.0 {
        return z.powi(a.re as i32);
    }
    if z == Complex64::new(0.0, 0.0) {
        return if a.re > 0.0 { z } else { Complex64::new(f64::INFINITY, 0.0) };
    }
    z.powc(a)
}

fn on_branch_cut(z: Complex64) -> bool {
    z.im == 0.0 && z.re <= 0.0
}

fn warn_branch(flag: &AtomicBool, value: Complex64) {
    if !flag.swap(true, Ordering::Relaxed) {
        log::warn!(
            "branch ambiguity: complex power of non-positive real value {} uses the principal branch",
            value.re
        );
    }
}

fn is_integer(a: Complex64) -> bool {
    a.im == 0.0 && a.re.fract() == 0.0
}

/// `x -> a phi(x)`, same eigenvalue.
pub fn kef_family_scale(phi: &Kef, a: f64) -> Result<Kef> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::ZeroScale);
    }
    let parent = phi.clone();
    let provenance = Provenance::Generated {
        op: FamilyOp::Scale { factor: a },
        parents: vec![phi.provenance.clone()],
    };
    Ok(Kef::new(phi.eigenvalue, provenance, move |x| Ok(parent.eval(x)? * a)))
}

/// `x -> phi(x)^alpha` on the principal branch, eigenvalue `alpha lambda`.
pub fn kef_family_power(phi: &Kef, alpha: Complex64) -> Result<Kef> {
    if alpha == Complex64::new(0.0, 0.0) {
        return Err(Error::ZeroExponent);
    }
    let parent = phi.clone();
    let warned = AtomicBool::new(false);
    let provenance = Provenance::Generated {
        op: FamilyOp::Power { re: alpha.re, im: alpha.im },
        parents: vec![phi.provenance.clone()],
    };
    Ok(Kef::new(alpha * phi.eigenvalue, provenance, move |x| {
        let v = parent.eval(x)?;
        if !is_integer(alpha) && on_branch_cut(v) {
            warn_branch(&warned, v);
        }
        Ok(cpow(v, alpha))
    }))
}

/// `x -> phi1(x)^n phi2(x)^m`, eigenvalue `n lambda1 + m lambda2`.
pub fn kef_family_product(phi1: &Kef, phi2: &Kef, n: f64, m: f64) -> Result<Kef> {
    let (p1, p2) = (phi1.clone(), phi2.clone());
    let (n, m) = (Complex64::new(n, 0.0), Complex64::new(m, 0.0));
    let warned = AtomicBool::new(false);
    let provenance = Provenance::Generated {
        op: FamilyOp::Product { n: n.re, m: m.re },
        parents: vec![phi1.provenance.clone(), phi2.provenance.clone()],
    };
    Ok(Kef::new(n * phi1.eigenvalue + m * phi2.eigenvalue, provenance, move |x| {
        let (a, b) = (p1.eval(x)?, p2.eval(x)?);
        for (v, e) in [(a, n), (b, m)] {
            if !is_integer(e) && on_branch_cut(v) {
                warn_branch(&warned, v);
            }
        }
        Ok(cpow(a, n) * cpow(b, m))
    }))
}

/// `x -> phi1(x)^(lambda/lambda1) + phi2(x)^(lambda/lambda2)`, eigenvalue `lambda`.
pub fn kef_family_combine(phi1: &Kef, phi2: &Kef, lambda_target: Complex64) -> Result<Kef> {
    let zero = Complex64::new(0.0, 0.0);
    if phi1.eigenvalue == zero || phi2.eigenvalue == zero {
        return Err(Error::ZeroEigenvalueParent);
    }
    let e1 = lambda_target / phi1.eigenvalue;
    let e2 = lambda_target / phi2.eigenvalue;
    let (p1, p2) = (phi1.clone(), phi2.clone());
    let warned = AtomicBool::new(false);
    let provenance = Provenance::Generated {
        op: FamilyOp::Combine { re: lambda_target.re, im: lambda_target.im },
        parents: vec![phi1.provenance.clone(), phi2.provenance.clone()],
    };
    Ok(Kef::new(lambda_target, provenance, move |x| {
        let (a, b) = (p1.eval(x)?, p2.eval(x)?);
        for (v, e) in [(a, e1), (b, e2)] {
            if !is_integer(e) && on_branch_cut(v) {
                warn_branch(&warned, v);
            }
        }
        Ok(cpow(a, e1) + cpow(b, e2))
    }))
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `phi(x) = e^(1 - sqrt(x))` for `x' = -2 sqrt(x)`, eigenvalue 1 until extinction.
pub fn finite_time_kef() -> Kef {
    Kef::analytic("exp(1 - sqrt(x))", real(1.0), |x| Ok(real((1.0 - x[0].max(0.0).sqrt()).exp())))
}

/// The two ancestors `x1` and `sqrt(2 x1 - x2)` of `x1' = x1, x2' = x2 - x1^2`,
/// both with eigenvalue 1.
pub fn nonlinear_2d_kefs() -> (Kef, Kef) {
    let phi1 = Kef::analytic("x1", real(1.0), |x| Ok(real(x[0])));
    let phi2 = Kef::analytic("sqrt(2 x1 - x2)", real(1.0), |x| Ok(real(2.0 * x[0] - x[1]).sqrt()));
    (phi1, phi2)
}

/// `phi(x) = x / sqrt(1 - x^2)` for `x' = x - x^3` on `(-1, 1)`, eigenvalue 1.
pub fn cubic_kef() -> Kef {
    Kef::analytic("x / sqrt(1 - x^2)", real(1.0), |x| {
        let v = x[0];
        if v.abs() >= 1.0 || !v.is_finite() {
            return Err(Error::OutOfRange { value: v, atom: None });
        }
        Ok(real(v / (1.0 - v * v).sqrt()))
    })
}

/// `phi(x) = <w, x>` for a left eigenvector `w` of a linear system, eigenvalue `lambda`.
pub fn linear_kef(w: DVector<Complex64>, lambda: Complex64) -> Kef {
    Kef::analytic("linear functional", lambda, move |x| {
        if x.len() != w.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("state of length {}", w.len()),
                found: format!("{}", x.len()),
            });
        }
        Ok(w.iter().zip(x.iter()).map(|(wi, &xi)| wi * xi).sum())
    })
}
