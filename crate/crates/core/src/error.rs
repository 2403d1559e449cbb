use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular tridiagonal system (zero pivot at row {row})")]
    SingularTridiagonal { row: usize },

    #[error("non-finite values after step {step}")]
    BlowUp { step: usize },

    #[error("Poisson right-hand side has nonzero mean {mean:e}")]
    NonZeroMean { mean: f64 },

    #[error("normal equations are singular (eigenvalue ratio {ratio:e})")]
    SingularNormalEquations { ratio: f64 },

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("time {0} does not match any stored snapshot")]
    TimeNotFound(f64),

    #[error("basis has no companion streamfunction modes")]
    MissingCompanions,

    #[error("requested {requested} modes but only {available} snapshots are available")]
    TooManyModes { requested: usize, available: usize },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage} stage failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// The underlying error with any stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Invalid input as opposed to a failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::InvalidGrid(_) | Error::TooManyModes { .. } | Error::TimeNotFound(_) | Error::Dimension(_)
        )
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }
}
