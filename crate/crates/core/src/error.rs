use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("design is rank deficient (diagonal {value:e} at column {index})")]
    RankDeficient { index: usize, value: f64 },
    #[error("eigendecomposition did not converge")]
    NoConvergence,
    #[error("matrix is singular")]
    Singular,
    #[error("column {0} is constant")]
    ConstantColumn(usize),
    #[error("weight for index {0} is degenerate (least-squares magnitude too small)")]
    DegenerateWeight(usize),
    #[error("solver hit the iteration cap ({iterations}) with KKT residual {kkt:e}")]
    MaxIterations { iterations: usize, kkt: f64 },
    #[error("group {0} is not active")]
    InactiveGroupRequested(usize),
    #[error("negative discriminant {0:e}")]
    NegativeDiscriminant(f64),
    #[error("fit map is discontinuous at coordinate {0}")]
    DiscontinuityDetected(usize),
    #[error("fitter failed on replicate {0}")]
    FitterFailure(usize),
    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("not enough residual degrees of freedom (n = {n}, p = {p})")]
    InsufficientDof { n: usize, p: usize },
    #[error("column {0} has too few distinct values to discretize")]
    DegenerateQuantiles(usize),
    #[error("csv: {0}")]
    CsvParse(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Numerical failures as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::CsvParse(_) | Error::InvalidInput(_) | Error::ConstantColumn(_) | Error::DegenerateQuantiles(_)
        )
    }
}
