use thiserror::Error;

/// Errors raised by the refinement toolkit.
///
/// Variant names are stable: the command-line front end reports them verbatim
/// as machine-readable error identifiers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains non-finite entries ({0})")]
    InvalidMatrix(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has spectral radius {0} >= 1")]
    UnstableMatrix(f64),
    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("iteration did not converge within {0} steps")]
    NoConvergence(usize),
    #[error("invalid pencil: {0}")]
    InvalidPencil(String),
    #[error("matrix pencil is singular")]
    SingularPencil,
    #[error("no well-conditioned shift found for the pencil")]
    IllConditionedPencil,
    #[error("input signal has {have} samples, {need} required")]
    InsufficientInputHorizon { have: usize, need: usize },
    #[error("[E B] is row-rank deficient (rank {rank} < {rows})")]
    NotConvertible { rank: usize, rows: usize },
    #[error("driving matrix [B_d; D_u] is column-rank deficient (rank {rank} < {cols})")]
    DegenerateDrivingMatrix { rank: usize, cols: usize },
    #[error("no lambda on the grid produced a valid stability certificate")]
    NoFeasibleLambda,
    #[error("constrained Sylvester equations have no exact solution (residual {0:e})")]
    Infeasible(f64),
    #[error("spectra intersect (distance {0:e})")]
    CommonEigenvalues(f64),
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("controller is not well-posed ({0})")]
    NotWellPosed(String),
    #[error("no exact interface exists for the supplied relation: {0}")]
    MissingInterface(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("input system is not stable (spectral radius {0})")]
    UnstableInput(f64),
    #[error("reduction order {order} is not in 1..={max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("initial state admits no continuation (residual {0:e})")]
    InconsistentInitialState(f64),
    #[error("trace horizons or output dimensions differ: {0}")]
    HorizonMismatch(String),
    #[error("I/O failure: {0}")]
    IoFailure(String),
}

impl Error {
    /// Stable identifier of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::UnstableMatrix(_) => "UnstableMatrix",
            Error::NotStabilizable => "NotStabilizable",
            Error::NoConvergence(_) => "NoConvergence",
            Error::InvalidPencil(_) => "InvalidPencil",
            Error::SingularPencil => "SingularPencil",
            Error::IllConditionedPencil => "IllConditionedPencil",
            Error::InsufficientInputHorizon { .. } => "InsufficientInputHorizon",
            Error::NotConvertible { .. } => "NotConvertible",
            Error::DegenerateDrivingMatrix { .. } => "DegenerateDrivingMatrix",
            Error::NoFeasibleLambda => "NoFeasibleLambda",
            Error::Infeasible(_) => "Infeasible",
            Error::CommonEigenvalues(_) => "CommonEigenvalues",
            Error::RankDeficiency(_) => "RankDeficiency",
            Error::NotWellPosed(_) => "NotWellPosed",
            Error::MissingInterface(_) => "MissingInterface",
            Error::InvalidCertificate(_) => "InvalidCertificate",
            Error::UnstableInput(_) => "UnstableInput",
            Error::OrderTooLarge { .. } => "OrderTooLarge",
            Error::InconsistentInitialState(_) => "InconsistentInitialState",
            Error::HorizonMismatch(_) => "HorizonMismatch",
            Error::IoFailure(_) => "IoFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
