//! Koopman eigenfunctions, dynamic mode decomposition, and sparse
//! mode decomposition over dictionaries of monotone decay profiles.

pub mod control;
pub mod dmd;
pub mod dynamics;
pub mod error;
pub mod koopman;
pub mod linalg;
pub mod profiles;
pub mod sparse;

pub use error::{Error, Result};
