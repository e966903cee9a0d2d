use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QstError {
    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("basis of {sites} sites exceeds the {max}-bit configuration width")]
    ConfigurationOverflow { sites: usize, max: usize },

    #[error("sector dimension {0} is too large")]
    DimensionTooLarge(usize),

    #[error("states or operators live in different bases")]
    BasisMismatch,

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NonHermitian(f64),

    #[error("no effective qubit: {0}")]
    NoEffectiveQubit(String),

    #[error("no closed-form effective couplings for L = {legs} with {bc} rungs; use the projection oracle")]
    UnsupportedCouplings { legs: usize, bc: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported protocol: {0}")]
    UnsupportedProtocol(String),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, QstError>;
