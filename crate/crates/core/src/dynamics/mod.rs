//! Example systems, fixed-step integration and sampled trajectories.

mod grid;
mod integrate;
mod systems;
mod trajectory;

pub use grid::TimeGrid;
pub use integrate::{detect_equilibrium, integrate, integrate_checked};
pub use systems::{
    cubic_system, finite_time_system, linear_system, nonlinear_2d_system, pde_bump_modes,
    synthetic_pde_trajectory, zero_homogeneous_trajectory, ClosedForm, SystemSpec, VectorField,
};
pub use trajectory::{fmt_f64, Trajectory};
