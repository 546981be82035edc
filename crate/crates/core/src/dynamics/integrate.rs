use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use super::systems::SystemSpec;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};

/// Classical fixed-step RK4 over a uniform grid. Column 0 is `x0`.
pub fn integrate(system: &SystemSpec, x0: &DVector<f64>, grid: &TimeGrid) -> Result<Trajectory> {
    integrate_checked(system, x0, grid, |_| true)
}

/// RK4 that also stops with `InadmissibleState` once `admissible` rejects a state.
pub fn integrate_checked<A>(
    system: &SystemSpec,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    admissible: A,
) -> Result<Trajectory>
where
    A: Fn(&DVector<f64>) -> bool,
{
    if x0.len() != system.dimension {
        return Err(Error::ShapeMismatch {
            expected: format!("state of length {}", system.dimension),
            found: format!("length {}", x0.len()),
        });
    }
    let h = grid.step()?;
    let times = grid.points();
    let mut states = DMatrix::zeros(system.dimension, grid.len());
    let mut x = x0.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0, time: times[0] });
    }
    if !admissible(&x) {
        return Err(Error::InadmissibleState { step: 0, time: times[0] });
    }
    states.set_column(0, &x);
    for k in 1..grid.len() {
        x = rk4_step(system, &x, h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k, time: times[k] });
        }
        if !admissible(&x) {
            return Err(Error::InadmissibleState { step: k, time: times[k] });
        }
        states.set_column(k, &x);
    }
    Trajectory::new(states, grid.clone())
}

fn rk4_step(system: &SystemSpec, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = system.eval(x);
    let k2 = system.eval(&(x + &k1 * (h / 2.0)));
    let k3 = system.eval(&(x + &k2 * (h / 2.0)));
    let k4 = system.eval(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// First index from which the finite-difference speed `|x_{k+1} - x_k| / dt`
/// stays below `tol` for the rest of the trajectory.
pub fn detect_equilibrium(traj: &Trajectory, tol: f64) -> Option<usize> {
    let t = traj.times();
    let states = traj.states();
    let n = traj.len();
    if n < 2 {
        return None;
    }
    let mut first = None;
    for k in (0..n - 1).rev() {
        let speed = (states.column(k + 1) - states.column(k)).norm() / (t[k + 1] - t[k]);
        if speed < tol {
            first = Some(k);
        } else {
            break;
        }
    }
    first
}
