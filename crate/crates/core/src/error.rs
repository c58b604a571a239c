use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    /// The row-norm bound must sit strictly below the smallest column norm.
    #[error(
        "row-norm bound B = {row_bound} is not below the minimum column norm C_min = {col_min}; \
         eta^2 = B^2/(C_min^2 - B^2) is undefined"
    )]
    BoundViolation { row_bound: f64, col_min: f64 },

    #[error("knockoff construction infeasible: {0}")]
    KnockoffInfeasible(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("invalid privacy budget: {0}")]
    BudgetInvalid(String),

    #[error("delta2 = {delta2} must exceed 2*exp(-p/2) = {floor} for p = {p}")]
    DeltaTooSmall { delta2: f64, floor: f64, p: usize },

    #[error(
        "estimate perturbation requires lambda_min = {lambda_min} > eta^2/(1 - eta^2) = {required}; \
         consider a ridge term (omega^2 > 0) to raise the effective lambda_min"
    )]
    PrivacyPreconditionFailed { lambda_min: f64, required: f64 },

    #[error("linear system is numerically singular")]
    SingularSystem,

    #[error("coordinate descent did not converge within {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("selection evaluation requires a ground-truth support")]
    MissingTruth,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("{failures} of {trials} trials failed at n = {n} (limit is 5%)")]
    TooManyFailures {
        n: usize,
        failures: usize,
        trials: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return Error::Io(io);
            }
            unreachable!();
        }
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            source_name: "csv".into(),
            line,
            message: e.to_string(),
        }
    }
}
