use serde::{Deserialize, Serialize};

use super::kef::Kef;
use crate::dynamics::{detect_equilibrium, Trajectory};

/// Absolute floor on `|lambda phi|` in the relative eigen-residual.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Half-width of an automatic exclusion window, as a fraction of the
/// trajectory's time span.
pub const WINDOW_FRACTION: f64 = 0.02;

/// Closed time interval left out of residual and rank statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

fn excluded(windows: &[Window], t: f64) -> bool {
    windows.iter().any(|w| w.contains(t))
}

/// Windows around each extinction time inside the trajectory, plus the tail
/// from the first snapshot after which the state stays at rest (speed below
/// `rest_tol`). Each window extends `WINDOW_FRACTION` of the span on both sides.
pub fn extinction_windows(traj: &Trajectory, extinction_times: &[f64], rest_tol: f64) -> Vec<Window> {
    let (t0, t1) = (traj.grid().start(), traj.grid().end());
    let half = WINDOW_FRACTION * (t1 - t0);
    let mut out: Vec<Window> = extinction_times
        .iter()
        .filter(|&&t| t >= t0 && t <= t1)
        .map(|&t| Window { start: t - half, end: t + half })
        .collect();
    if let Some(k) = detect_equilibrium(traj, rest_tol) {
        out.push(Window { start: traj.times()[k] - half, end: t1 });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max: f64,
    pub mean: f64,
    /// Interior snapshots that entered the statistics.
    pub evaluated: usize,
    /// Interior snapshots inside a window or where `phi` could not be evaluated.
    pub skipped: usize,
}

/// `max_k |D phi_k - lambda phi_k| / max(|lambda phi_k|, floor)` over interior
/// snapshots, where `D` is the central difference in time.
pub fn eigen_residual(phi: &Kef, traj: &Trajectory, exclusion: &[Window]) -> ResidualReport {
    let t = traj.times();
    let n = traj.len();
    let lambda = phi.eigenvalue();
    let values: Vec<_> = (0..n).map(|k| phi.eval(&traj.state(k)).ok()).collect();
    let (mut max, mut sum, mut evaluated, mut skipped) = (0.0f64, 0.0, 0usize, 0usize);
    for k in 1..n.saturating_sub(1) {
        if excluded(exclusion, t[k]) {
            skipped += 1;
            continue;
        }
        let (Some(prev), Some(cur), Some(next)) = (values[k - 1], values[k], values[k + 1]) else {
            skipped += 1;
            continue;
        };
        let deriv = (next - prev) / (t[k + 1] - t[k - 1]);
        let target = lambda * cur;
        let r = (deriv - target).norm() / target.norm().max(RESIDUAL_FLOOR);
        if !r.is_finite() {
            skipped += 1;
            continue;
        }
        max = max.max(r);
        sum += r;
        evaluated += 1;
    }
    ResidualReport { max, mean: if evaluated > 0 { sum / evaluated as f64 } else { 0.0 }, evaluated, skipped }
}
