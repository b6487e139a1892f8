use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("point clouds differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("cloud size {0} exceeds the assignment cap of {1}")]
    TooLarge(usize, usize),
    #[error("need at least {needed} samples, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("bad moment profile parameters: {0}")]
    BadProfileParams(String),
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("chain is not irreducible")]
    Reducible,
    #[error("chain is periodic with period {0}")]
    Periodic(usize),
    #[error("kernel row {row} does not sum to one (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("minorization has zero overlap on the small set")]
    NoOverlap,
    #[error("too few regeneration cycles: {have} < {needed}")]
    TooFewCycles { have: usize, needed: usize },
    #[error("trace is too short: needs regeneration {needed}, has {have}")]
    MissingRegens { needed: usize, have: usize },
    #[error("bad block lengths: {0}")]
    BadLengths(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("enumeration of {0} subsets exceeds the cap")]
    TooManySubsets(u128),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("unsupported setting: {0}")]
    BadSetting(String),
    #[error("need at least {needed} points to fit, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("non-positive estimate at n = {0} with zero stderr")]
    NonPositiveEstimates(usize),
    #[error("compute budget of {0:.1}s exceeded")]
    BudgetExceeded(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
