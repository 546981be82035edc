use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ClosedForm = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Autonomous system `x' = rhs(x)` on R^N, optionally with a known solution.
#[derive(Clone)]
pub struct SystemSpec {
    pub label: String,
    pub dimension: usize,
    pub rhs: VectorField,
    pub closed_form: Option<ClosedForm>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("label", &self.label)
            .field("dimension", &self.dimension)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl SystemSpec {
    pub fn new<F>(label: impl Into<String>, dimension: usize, rhs: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { label: label.into(), dimension, rhs: Arc::new(rhs), closed_form: None }
    }

    pub fn with_closed_form<F>(mut self, closed_form: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.closed_form = Some(Arc::new(closed_form));
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(x)
    }

    /// Samples the closed form on `grid`, if the system has one.
    pub fn sample_closed_form(&self, grid: &TimeGrid) -> Option<Result<Trajectory>> {
        let cf = self.closed_form.as_ref()?;
        let cols: Vec<DVector<f64>> = grid.points().iter().map(|&t| cf(t)).collect();
        Some(Trajectory::new(DMatrix::from_columns(&cols), grid.clone()))
    }
}

/// `x' = -2 sqrt(x)`, `x(0) = 1`: reaches the equilibrium 0 at t = 1 and stays there.
pub fn finite_time_system() -> SystemSpec {
    SystemSpec::new("finite-time", 1, |x| DVector::from_element(1, -2.0 * x[0].max(0.0).sqrt()))
        .with_closed_form(|t| {
            let v = if t <= 1.0 { (1.0 - t) * (1.0 - t) } else { 0.0 };
            DVector::from_element(1, v)
        })
}

/// `x1' = x1, x2' = x2 - x1^2` from `[1, 1]`.
pub fn nonlinear_2d_system() -> SystemSpec {
    SystemSpec::new("nonlinear-2d", 2, |x| DVector::from_vec(vec![x[0], x[1] - x[0] * x[0]]))
        .with_closed_form(|t| {
            let e = t.exp();
            DVector::from_vec(vec![e, 2.0 * e - e * e])
        })
}

/// `x' = x - x^3`: equilibria at -1, 0, 1.
pub fn cubic_system() -> SystemSpec {
    SystemSpec::new("cubic", 1, |x| DVector::from_element(1, x[0] - x[0].powi(3)))
}

/// `x' = A x`; the closed form `exp(A t) x0` is attached for the given start.
pub fn linear_system(a: DMatrix<f64>, x0: DVector<f64>) -> Result<SystemSpec> {
    if !a.is_square() || a.nrows() != x0.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} matrix", x0.len()),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let n = a.nrows();
    let field = a.clone();
    Ok(SystemSpec::new("linear", n, move |x| &field * x)
        .with_closed_form(move |t| (&a * t).exp() * &x0))
}

/// `x(t) = v (1 - lambda t)` on `[0, 1/lambda)`.
pub fn zero_homogeneous_trajectory(v: &DVector<f64>, lambda: f64, grid: &TimeGrid) -> Result<Trajectory> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::DomainError(format!("lambda must be positive, got {lambda}")));
    }
    if grid.start() < 0.0 || grid.end() >= 1.0 / lambda {
        return Err(Error::DomainError(format!(
            "grid [{}, {}] must lie in [0, {})",
            grid.start(),
            grid.end(),
            1.0 / lambda
        )));
    }
    let cols: Vec<DVector<f64>> = grid.points().iter().map(|&t| v * (1.0 - lambda * t)).collect();
    Trajectory::new(DMatrix::from_columns(&cols), grid.clone())
}

/// `u(., t) = v1 (1 - lambda1 t)_+ + v2 (1 - lambda2 t)_+`.
pub fn synthetic_pde_trajectory(
    v1: &DVector<f64>,
    v2: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    if v1.len() != v2.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("mode of length {}", v1.len()),
            found: format!("length {}", v2.len()),
        });
    }
    let ramp = |lambda: f64, t: f64| (1.0 - lambda * t).max(0.0);
    let cols: Vec<DVector<f64>> = grid
        .points()
        .iter()
        .map(|&t| v1 * ramp(lambda1, t) + v2 * ramp(lambda2, t))
        .collect();
    Trajectory::new(DMatrix::from_columns(&cols), grid.clone())
}

/// Default spatial modes for the two-mode example: smooth compactly supported
/// bumps on `n` points of [0, 1]. `v1` is centred at 0.35 (radius 0.2), `v2`
/// at 0.6 (radius 0.25, amplitude 0.7); their supports overlap.
pub fn pde_bump_modes(n: usize) -> (DVector<f64>, DVector<f64>) {
    let bump = |x: f64, c: f64, r: f64| {
        let s = (x - c) / r;
        if s.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    };
    let x = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let v1 = DVector::from_fn(n, |i, _| bump(x(i), 0.35, 0.2));
    let v2 = DVector::from_fn(n, |i, _| 0.7 * bump(x(i), 0.6, 0.25));
    (v1, v2)
}
