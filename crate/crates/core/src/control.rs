//! Feedback linearization through a Koopman eigenfunction and closed-loop
//! simulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dmd::IMAGINARY_TOL;
use crate::dynamics::{integrate_checked, SystemSpec, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::koopman::{default_step, jacobian, Kef, KefVector};
use crate::linalg::lstsq_complex;

pub type CancelTerm = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type OuterLaw = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type Domain = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Tolerance after which a scalar Jacobian counts as vanished.
const SINGULAR_JACOBIAN: f64 = 1e-14;

/// Settling threshold used in closed-loop reports.
pub const SETTLING_TOL: f64 = 1e-2;

/// Input `u(x) = cancel_term(x) + outer_law(x)` steering towards `target`.
#[derive(Clone)]
pub struct Controller {
    pub cancel_term: CancelTerm,
    pub outer_law: OuterLaw,
    pub target: DVector<f64>,
    /// States where the cancel term is defined; `None` means everywhere.
    pub domain: Option<Domain>,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller").field("target", &self.target).finish()
    }
}

impl Controller {
    /// Pairs `cancel_term` with the outer law `w = -(x - target)`.
    pub fn proportional(cancel_term: CancelTerm, target: DVector<f64>) -> Self {
        let t = target.clone();
        Self { cancel_term, outer_law: Arc::new(move |x| -(x - &t)), target, domain: None }
    }

    pub fn with_domain<F>(mut self, domain: F) -> Self
    where
        F: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    pub fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.cancel_term)(x)? + (self.outer_law)(x))
    }
}

/// `cancel(x) = -J(x)^{-1} lambda phi(x)` with `J` the numerical gradient of
/// `phi`. For `phi` an eigenfunction of `system` this equals `-rhs(x)`.
pub fn feedback_linearize(kef: &Kef, system: &SystemSpec, h: Option<f64>) -> Result<CancelTerm> {
    let n = system.dimension;
    let kefs = KefVector::new(vec![kef.clone()]);
    if n != kefs.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} eigenfunctions"),
            found: format!("{}", kefs.len()),
        });
    }
    Ok(Arc::new(move |x: &DVector<f64>| {
        let step = h.unwrap_or_else(|| default_step(x));
        let jac = jacobian(&kefs, x, step)?;
        let rhs = kefs.lambda_matrix() * kefs.eval(x)?;
        let p = if n == 1 {
            if jac[(0, 0)].norm() <= SINGULAR_JACOBIAN {
                return Err(Error::SingularJacobian(x[0]));
            }
            DVector::from_element(1, rhs[0] / jac[(0, 0)])
        } else {
            lstsq_complex(&jac, &rhs, 1e-12)?
        };
        let re = p.map(|c: Complex64| c.re);
        let im = p.map(|c: Complex64| c.im).norm();
        if im > IMAGINARY_TOL * re.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::ImaginaryResidue(im));
        }
        Ok(-re)
    }))
}

/// `-x (1 - x^2)`, the exact cancel term for `x' = x - x^3`.
pub fn cubic_cancel_term() -> CancelTerm {
    Arc::new(|x: &DVector<f64>| Ok(DVector::from_element(1, -x[0] * (1.0 - x[0] * x[0]))))
}

/// Integrates `x' = rhs(x) + u(x)`. A failing input evaluation surfaces as a
/// non-finite state; leaving the controller's domain is `InadmissibleState`.
pub fn simulate_closed_loop(
    system: &SystemSpec,
    ctrl: &Controller,
    x0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let open = system.clone();
    let c = ctrl.clone();
    let closed = SystemSpec::new(format!("{} (closed loop)", system.label), system.dimension, move |x| {
        match c.input(x) {
            Ok(u) => open.eval(x) + u,
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    });
    match &ctrl.domain {
        Some(d) => integrate_checked(&closed, x0, grid, |x| d(x)),
        None => integrate_checked(&closed, x0, grid, |_| true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub final_error: f64,
    /// First time with `|x - x*| < SETTLING_TOL`.
    pub settling_time: Option<f64>,
}

impl ClosedLoopReport {
    pub fn new(traj: &Trajectory, target: &DVector<f64>) -> Self {
        let err = |k: usize| (traj.state(k) - target).norm();
        let n = traj.len();
        Self {
            x0: traj.state(0).as_slice().to_vec(),
            target: target.as_slice().to_vec(),
            final_error: if n > 0 { err(n - 1) } else { f64::NAN },
            settling_time: (0..n).find(|&k| err(k) < SETTLING_TOL).map(|k| traj.times()[k]),
        }
    }
}
