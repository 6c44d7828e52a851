use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// [`Error::name`] gives a stable identifier used by the command-line
/// front-end (`code=NAME`).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFiniteData(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("duplicate asset identifier `{0}`")]
    DuplicateAsset(String),
    #[error("missing cell at data row {row}, column {column}")]
    MissingCell { row: usize, column: usize },
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("need at least n+1 = {needed} observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("expected returns are degenerate: {0}")]
    DegenerateAlpha(String),
    #[error("covariance is not positive definite (smallest eigenvalue {0:e})")]
    SingularCovariance(f64),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver failed: {0}")]
    ConvergenceFailure(String),
    #[error("1'inv(S)a = {0:e} is zero; the fully invested risky portfolio is undefined")]
    ZeroB(f64),
    #[error("parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("missing parameter {0}")]
    MissingParameter(&'static str),
    #[error("condition number must be >= 1, got {0}")]
    InvalidKappa(f64),
    #[error("auxiliary angle must lie in [0, pi/2), got {0}")]
    InvalidPsi(f64),
    #[error("eta must be >= 1, got {0}")]
    InvalidEta(f64),
    #[error("shrinkage parameter {value} outside its admissible range (limit {limit})")]
    InvalidK { value: f64, limit: f64 },
    #[error("zero vector in {0}")]
    ZeroVector(&'static str),
    #[error("implied returns sum to zero; normalization undefined")]
    ZeroSum,
    #[error("shrunk covariance lost positive definiteness")]
    ShrinkBrokeSpd,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("tolerance not met: {0}")]
    ToleranceNotMet(String),
    #[error("equality constraints are rank deficient (rank {rank} < {rows})")]
    RankDeficientConstraints { rank: usize, rows: usize },
    #[error("KKT system is singular or inaccurate: {0}")]
    SingularKkt(String),
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonFiniteData(_) => "NonFiniteData",
            Error::InvalidDimension(_) => "InvalidDimension",
            Error::DuplicateAsset(_) => "DuplicateAsset",
            Error::MissingCell { .. } => "MissingCell",
            Error::MalformedInput(_) => "MalformedInput",
            Error::InsufficientObservations { .. } => "InsufficientObservations",
            Error::DegenerateAlpha(_) => "DegenerateAlpha",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::ConvergenceFailure(_) => "ConvergenceFailure",
            Error::ZeroB(_) => "ZeroB",
            Error::NonPositiveParameter { .. } => "NonPositiveParameter",
            Error::MissingParameter(_) => "MissingParameter",
            Error::InvalidKappa(_) => "InvalidKappa",
            Error::InvalidPsi(_) => "InvalidPsi",
            Error::InvalidEta(_) => "InvalidEta",
            Error::InvalidK { .. } => "InvalidK",
            Error::ZeroVector(_) => "ZeroVector",
            Error::ZeroSum => "ZeroSum",
            Error::ShrinkBrokeSpd => "ShrinkBrokeSPD",
            Error::Infeasible(_) => "Infeasible",
            Error::NoRoot(_) => "NoRoot",
            Error::ToleranceNotMet(_) => "ToleranceNotMet",
            Error::RankDeficientConstraints { .. } => "RankDeficientConstraints",
            Error::SingularKkt(_) => "SingularKkt",
            Error::EmptyGrid(_) => "EmptyGrid",
            Error::VerificationFailed(_) => "VerificationFailed",
        }
    }
}
