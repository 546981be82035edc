//! Koopman eigenfunctions: construction from time mappings, family
//! generation, eigen-residual checks, Jacobians and observability, dynamics
//! reconstruction, and eigenfunctionals of sparse decompositions.

mod functional;
mod jacobian;
mod kef;
mod residual;

use serde::{Deserialize, Serialize};

pub use functional::{
    eigenfunctional_series, kmd_truncated_expansion, recover_profiles, time_mapping_from_modes,
    EigenfunctionalSeries, LinearFit, ModeSeries, SeriesOptions, TimeMappingReport, EXTINCT_LEVEL,
    MAX_MODE_CONDITION, ROUNDING_SLACK,
};
pub use jacobian::{
    default_step, finite_difference_velocities, jacobian, koopman_mode_check, mode_decomposition_residual,
    observability_rank, reconstruct_dynamics, ObservabilityReport, ObservabilityReportJson, Verdict,
    MAX_OBSERVABILITY_SAMPLES, OBSERVABLE_FRACTION, RECONSTRUCTION_RANK_TOL,
};
pub use kef::{
    cubic_kef, finite_time_kef, kef_family_combine, kef_family_power, kef_family_product, kef_family_scale,
    kef_from_mapping, linear_kef, nonlinear_2d_kefs, Evaluator, FamilyOp, Kef, KefVector, Provenance,
};
pub use residual::{eigen_residual, extinction_windows, ResidualReport, Window, RESIDUAL_FLOOR, WINDOW_FRACTION};

use crate::dmd::complex_pair;

/// JSON summary of one eigenfunction checked against a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KefReport {
    pub provenance: Provenance,
    /// `[re, im]` as decimal strings.
    pub eigenvalue: [String; 2],
    pub residual: ResidualReport,
    pub excluded: Vec<Window>,
}

impl KefReport {
    pub fn new(kef: &Kef, residual: ResidualReport, excluded: Vec<Window>) -> Self {
        Self { provenance: kef.provenance().clone(), eigenvalue: complex_pair(&kef.eigenvalue()), residual, excluded }
    }
}
