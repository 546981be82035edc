use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::sparse::SparseDecomposition;

/// Largest condition number of `V^T V` accepted when projecting onto modes.
pub const MAX_MODE_CONDITION: f64 = 1e12;

/// Recovered profile values in `(1, 1 + ROUNDING_SLACK]` are treated as 1.
pub const ROUNDING_SLACK: f64 = 1e-8;

/// Recovered profile values at or below this are treated as extinct.
pub const EXTINCT_LEVEL: f64 = 1e-8;

/// `D = (V^T V)^{-1} V^T X`.
pub fn recover_profiles(v_hat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v_hat.nrows() != x.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", x.nrows()),
            found: format!("{}", v_hat.nrows()),
        });
    }
    let gram = v_hat.transpose() * v_hat;
    let condition = condition_number(&gram);
    if !(condition < MAX_MODE_CONDITION) {
        return Err(Error::IllConditionedModes { condition });
    }
    let chol = gram.cholesky().ok_or(Error::IllConditionedModes { condition })?;
    Ok(chol.solve(&(v_hat.transpose() * x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMappingReport {
    /// Recovered time per selected atom (outer) and snapshot (inner);
    /// `None` where the profile value is outside the invertible range.
    pub times: Vec<Vec<Option<f64>>>,
    /// `(atom position, snapshot)` pairs that could not be inverted.
    pub out_of_range: Vec<(usize, usize)>,
    /// Per snapshot: largest minus smallest recovered time over atoms, when at
    /// least two atoms are valid.
    pub disagreement: Vec<Option<f64>>,
    pub max_disagreement: f64,
    pub mean_disagreement: f64,
}

/// Inverts each recovered profile row back to time.
pub fn time_mapping_from_modes(dec: &SparseDecomposition, x: &DMatrix<f64>) -> Result<TimeMappingReport> {
    let d = recover_profiles(&dec.modes, x)?;
    let (s, m) = d.shape();
    let mut times = vec![vec![None; m]; s];
    let mut out_of_range = Vec::new();
    for i in 0..s {
        for k in 0..m {
            let mut v = d[(i, k)];
            if v > 1.0 && v <= 1.0 + ROUNDING_SLACK {
                v = 1.0;
            }
            let t = if v > EXTINCT_LEVEL { dec.kind.inverse(dec.lambdas[i], v).ok() } else { None };
            match t {
                Some(t) => times[i][k] = Some(t),
                None => out_of_range.push((i, k)),
            }
        }
    }
    let disagreement: Vec<Option<f64>> = (0..m)
        .map(|k| {
            let valid: Vec<f64> = (0..s).filter_map(|i| times[i][k]).collect();
            (valid.len() >= 2).then(|| {
                let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
        })
        .collect();
    let present: Vec<f64> = disagreement.iter().flatten().copied().collect();
    let max_disagreement = present.iter().copied().fold(0.0, f64::max);
    let mean_disagreement =
        if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(TimeMappingReport { times, out_of_range, disagreement, max_disagreement, mean_disagreement })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    /// The linear fit stops this long before the mode's extinction time.
    pub margin: f64,
    /// Absolute deviation from the fitted line that counts as departure.
    pub departure_tol: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self { margin: 0.5, departure_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation from the line inside the window.
    pub max_residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSeries {
    pub lambda: f64,
    pub values: Vec<f64>,
    pub fit: Option<LinearFit>,
    /// First time after the fit window at which the series leaves the line.
    pub departure_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionalSeries {
    pub times: Vec<f64>,
    pub modes: Vec<ModeSeries>,
}

fn fit_line(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = t.len() as f64;
    if t.len() < 2 {
        return None;
    }
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let stt: f64 = t.iter().map(|&a| (a - mt) * (a - mt)).sum();
    if stt == 0.0 {
        return None;
    }
    let sty: f64 = t.iter().zip(y).map(|(&a, &b)| (a - mt) * (b - my)).sum();
    let slope = sty / stt;
    Some((slope, my - slope * mt))
}

/// Gram-inverse projections of the snapshots onto the modes, minus one.
/// For truncated-linear profiles each series is `-lambda_i t` until the
/// mode vanishes; a line is fitted on `[t0, T_ext - margin]`.
pub fn eigenfunctional_series(
    dec: &SparseDecomposition,
    traj: &Trajectory,
    opts: &SeriesOptions,
) -> Result<EigenfunctionalSeries> {
    let d = recover_profiles(&dec.modes, traj.states())?;
    let times = traj.times().to_vec();
    let t0 = traj.grid().start();
    let t1 = traj.grid().end();
    let mut modes = Vec::with_capacity(d.nrows());
    for (i, &lambda) in dec.lambdas.iter().enumerate() {
        let values: Vec<f64> = d.row(i).iter().map(|v| v - 1.0).collect();
        let hi = dec.kind.extinction_time(lambda).map_or(t1, |e| (e - opts.margin).min(t1));
        let (wt, wy): (Vec<f64>, Vec<f64>) =
            times.iter().zip(&values).filter(|(&t, _)| t >= t0 && t <= hi).map(|(&t, &y)| (t, y)).unzip();
        let fit = fit_line(&wt, &wy).map(|(slope, intercept)| LinearFit {
            slope,
            intercept,
            max_residual: wt
                .iter()
                .zip(&wy)
                .map(|(&t, &y)| (y - slope * t - intercept).abs())
                .fold(0.0, f64::max),
            window: (t0, hi),
            points: wt.len(),
        });
        let departure_time = fit.as_ref().and_then(|f| {
            times
                .iter()
                .zip(&values)
                .find(|(&t, &y)| t > hi && (y - f.slope * t - f.intercept).abs() > opts.departure_tol)
                .map(|(&t, _)| t)
        });
        modes.push(ModeSeries { lambda, values, fit, departure_time });
    }
    Ok(EigenfunctionalSeries { times, modes })
}

impl EigenfunctionalSeries {
    /// Header `t,phi_1,...` then one row per snapshot.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.modes.iter().map(|m| format!("lambda={}", crate::dynamics::fmt_f64(m.lambda))));
        w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = vec![crate::dynamics::fmt_f64(t)];
            row.extend(self.modes.iter().map(|m| crate::dynamics::fmt_f64(m.values[k])));
            w.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `1 - lambda sum_{n=1}^{terms} (-1)^{n+1} (phi - 1)^n / n`, the truncated
/// logarithm series that recovers `1 - lambda t` from `phi = e^t`.
pub fn kmd_truncated_expansion(phi_value: f64, lambda: f64, terms: usize) -> Result<f64> {
    if terms == 0 {
        return Err(Error::DomainError("need at least one series term".into()));
    }
    let r = phi_value - 1.0;
    if !(r.abs() < 1.0) {
        return Err(Error::RadiusExceeded(r.abs()));
    }
    let mut sum = 0.0;
    let mut power = 1.0;
    for n in 1..=terms {
        power *= r;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * power / n as f64;
    }
    Ok(1.0 - lambda * sum)
}
