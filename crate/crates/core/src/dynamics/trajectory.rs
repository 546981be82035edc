use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use crate::error::{Error, Result};

/// Sampled solution: column `k` of `states` is the state at `grid.points()[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: DMatrix<f64>,
    grid: TimeGrid,
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        if states.ncols() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns", grid.len()),
                found: format!("{} columns", states.ncols()),
            });
        }
        if states.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: "at least one state row".into(),
                found: "0 rows".into(),
            });
        }
        if let Some((k, _)) = states
            .column_iter()
            .enumerate()
            .find(|(_, c)| c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteState { step: k, time: grid.points()[k] });
        }
        Ok(Self { states, grid })
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }

    /// State dimension N.
    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    /// Number of snapshots M + 1.
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.column(k).into_owned()
    }

    /// Snapshots with `lo <= t <= hi`.
    pub fn slice_time(&self, lo: f64, hi: f64) -> Result<Self> {
        let idx: Vec<usize> = self
            .times()
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= lo && t <= hi)
            .map(|(k, _)| k)
            .collect();
        if idx.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "window [{lo}, {hi}] holds fewer than 2 samples"
            )));
        }
        let states = self.states.select_columns(&idx);
        let grid = TimeGrid::from_points(idx.iter().map(|&k| self.times()[k]).collect())?;
        Self::new(states, grid)
    }

    /// Writes the CSV layout: first row the time grid, then one row per state component.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(self.times().iter().map(|&t| fmt_f64(t)))
            .map_err(csv_err)?;
        for row in self.states.row_iter() {
            w.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::Parse(
                "trajectory CSV needs a time row and at least one state row".into(),
            ));
        }
        let grid = TimeGrid::from_points(rows.remove(0))?;
        let ncols = grid.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(Error::Parse(format!(
                "line {}: expected {ncols} values, found {}",
                i + 2,
                r.len()
            )));
        }
        let states = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        Self::new(states, grid)
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_column_mismatch() {
        let g = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        assert!(matches!(
            Trajectory::new(DMatrix::zeros(2, 4), g),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        let g = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let mut m = DMatrix::zeros(1, 3);
        m[(0, 2)] = f64::INFINITY;
        assert!(matches!(Trajectory::new(m, g), Err(Error::NonFiniteState { step: 2, .. })));
    }

    #[test]
    fn slice_time_window() {
        let g = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let t = Trajectory::new(DMatrix::from_fn(1, 11, |_, j| j as f64), g).unwrap();
        let s = t.slice_time(0.25, 0.75).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.states()[(0, 0)], 3.0);
    }

    #[test]
    fn csv_reports_ragged_rows() {
        let text = "0,1,2\n1,2\n";
        assert!(matches!(Trajectory::read_csv(text.as_bytes()), Err(Error::Parse(_))));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(
            vals in proptest::collection::vec(-1e300f64..1e300, 12),
            dt in 1e-6f64..10.0,
        ) {
            let g = TimeGrid::uniform(-1.0, -1.0 + 5.0 * dt, 6).unwrap();
            let t = Trajectory::new(DMatrix::from_row_slice(2, 6, &vals), g).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            let back = Trajectory::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
