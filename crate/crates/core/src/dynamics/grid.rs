use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on step-size variation for a grid to count as uniform.
const UNIFORM_RTOL: f64 = 1e-9;

/// Strictly increasing sample times `t_0 < ... < t_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `samples` equally spaced points on `[start, end]`, both ends included.
    pub fn uniform(start: f64, end: f64, samples: usize) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if end <= start {
            return Err(Error::InvalidGrid(format!("end {end} must exceed start {start}")));
        }
        if samples < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 samples, got {samples}")));
        }
        let m = (samples - 1) as f64;
        let span = end - start;
        let mut points: Vec<f64> = (0..samples).map(|k| start + span * (k as f64) / m).collect();
        points[samples - 1] = end;
        Ok(Self { points, uniform: true })
    }

    /// Arbitrary strictly increasing points. Uniformity is detected, not assumed.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 samples, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("time points must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("time points must be strictly increasing".into()));
        }
        let mean = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        let uniform = points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - mean).abs() <= UNIFORM_RTOL * mean.abs().max(f64::MIN_POSITIVE));
        Ok(Self { points, uniform })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Constant step of a uniform grid.
    pub fn step(&self) -> Result<f64> {
        if !self.uniform {
            return Err(Error::NonUniformGrid);
        }
        Ok((self.end() - self.start()) / (self.len() - 1) as f64)
    }

    /// Index of the sample closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.points.len() => self.points.len() - 1,
            Err(i) => {
                if (t - self.points[i - 1]) <= (self.points[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}
