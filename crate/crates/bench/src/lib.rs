//! Shared fixtures for the benchmarks.

use koopdyn_core::dynamics::{pde_bump_modes, synthetic_pde_trajectory, TimeGrid, Trajectory};
use koopdyn_core::profiles::{build_dictionary, DictionarySpec, ProfileDictionary, ProfileKind, Spacing};

/// The two-mode truncated-linear example on `points` spatial samples.
pub fn pde_trajectory(points: usize) -> Trajectory {
    let grid = TimeGrid::uniform(0.0, 35.0, 351).expect("valid grid");
    let (v1, v2) = pde_bump_modes(points);
    synthetic_pde_trajectory(&v1, &v2, 0.1, 1.0 / 30.0, &grid).expect("matching modes")
}

/// Log-spaced truncated-linear dictionary containing both true rates.
pub fn pde_dictionary(traj: &Trajectory, count: usize) -> ProfileDictionary {
    let spec = DictionarySpec {
        kind: ProfileKind::TruncatedLinear,
        lambda_min: 1.0 / 90.0,
        lambda_max: 0.9,
        count: Some(count),
        spacing: Spacing::Log,
        include: vec![0.1, 1.0 / 30.0],
    };
    build_dictionary(&spec.family().expect("valid spec"), traj.grid()).expect("dictionary")
}
