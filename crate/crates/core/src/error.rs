use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("curves are defined on different grids")]
    GridMismatch,

    #[error("operation requires a uniform grid")]
    NonUniformGrid,

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("need at least {required} curves, got {actual}")]
    TooFewCurves { required: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("eigen-solver did not converge")]
    EigenNoConvergence,

    #[error("basis function {index} is numerically dependent on its predecessors (residual norm {residual:e})")]
    LinearDependence { index: usize, residual: f64 },

    #[error("component {requested} requested but only {available} retained")]
    ComponentOutOfRange { requested: usize, available: usize },

    #[error("all {0} bootstrap replicates were degenerate")]
    AllDegenerate(usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Asymmetric(_)
                | Error::EigenNoConvergence
                | Error::LinearDependence { .. }
                | Error::AllDegenerate(_)
        )
    }
}
