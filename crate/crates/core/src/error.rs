use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the grid bounds")]
    OutOfDomain { point: Vec<f64> },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("point {point:?} of chart {chart} is not covered by any partition-of-unity weight")]
    UncoveredPoint { chart: usize, point: Vec<f64> },

    #[error("CG did not converge in chart {chart}: {iterations} iterations, relative residual {residual:e}")]
    CgNotConverged {
        chart: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("outer iteration did not stabilize within {iterations} steps (last max DOF change {last_change:e})")]
    OuterNotConverged {
        iterations: usize,
        last_change: f64,
        /// Max-norm DOF change per outer step.
        history: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("analysis unavailable: {0}")]
    AnalysisUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
