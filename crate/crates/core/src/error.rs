use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("time grid is not uniform")]
    NonUniformGrid,

    #[error("state became non-finite at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("need at least 3 snapshots, got {got}")]
    TooFewSnapshots { got: usize },

    #[error("requested rank {requested} exceeds numerical rank {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("snapshot data is numerically singular (condition number {condition:e})")]
    SingularData { condition: f64 },

    #[error("reduced linear map is not diagonalizable (eigenvector condition number {condition:e})")]
    DefectiveMap { condition: f64 },

    #[error("degenerate profile family: {0}")]
    DegenerateFamily(String),

    #[error("value {value} is outside the invertible range of atom{}", atom.map(|a| format!(" {a}")).unwrap_or_default())]
    OutOfRange { value: f64, atom: Option<usize> },

    #[error("lasso did not converge after {iterations} sweeps (max KKT violation {violation:e})")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("no candidate support with a well-conditioned refit")]
    EmptySupport,

    #[error("mode matrix is ill-conditioned (condition number {condition:e})")]
    IllConditionedModes { condition: f64 },

    #[error("scale factor must be nonzero")]
    ZeroScale,

    #[error("exponent must be nonzero")]
    ZeroExponent,

    #[error("parent eigenfunction has zero eigenvalue")]
    ZeroEigenvalueParent,

    #[error("Jacobian has rank {rank}, need {required}")]
    RankDeficientJacobian { rank: usize, required: usize },

    #[error("Jacobian vanishes at x = {0}")]
    SingularJacobian(f64),

    #[error("result has relative imaginary residue {0:e}")]
    ImaginaryResidue(f64),

    #[error("|phi - 1| = {0} is outside the series radius of convergence")]
    RadiusExceeded(f64),

    #[error("state left the admissible region at step {step} (t = {time})")]
    InadmissibleState { step: usize, time: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::RankTooLarge { .. }
                | Error::SingularData { .. }
                | Error::DefectiveMap { .. }
                | Error::NoConvergence { .. }
                | Error::EmptySupport
                | Error::IllConditionedModes { .. }
                | Error::RankDeficientJacobian { .. }
                | Error::SingularJacobian(_)
                | Error::ImaginaryResidue(_)
                | Error::InadmissibleState { .. }
                | Error::OutOfRange { .. }
        )
    }
}
