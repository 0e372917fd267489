use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error{}: {msg}", atom.map(|i| format!(" at atom {i}")).unwrap_or_default())]
    Domain { atom: Option<usize>, msg: String },

    #[error("overflow: {0}; use the log-weight / log-domain path instead")]
    Overflow(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("weight {weight} exceeds the declared bound {bound}")]
    BoundViolation { weight: f64, bound: f64 },

    #[error("|g(x)| = {norm} exceeds g_max = {g_max}{}", atom.map(|i| format!(" at atom {i}")).unwrap_or_default())]
    TiltBoundViolation {
        atom: Option<usize>,
        norm: f64,
        g_max: f64,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("missing bound: {0}")]
    MissingBound(String),

    #[error("non-finite value at {location}")]
    Numerics { location: String },

    #[error("training diverged at step {step}")]
    TrainingDiverged {
        step: usize,
        trace: crate::diffusion::LossTrace,
    },

    #[error("score is singular at t = 0")]
    SingularTime,

    #[error("no true-score oracle available and surrogate mode not requested")]
    OracleUnavailable,

    #[error("inequality violated: {0}")]
    InequalityViolation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the CLI: 2 configuration, 3 numerics, 4 I/O,
    /// 5 a checked inequality failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 4,
            Error::InequalityViolation(_) => 5,
            Error::Overflow(_)
            | Error::DegenerateMeasure(_)
            | Error::Numerics { .. }
            | Error::TrainingDiverged { .. }
            | Error::BoundViolation { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerics(location: impl Into<String>) -> Self {
        Error::Numerics {
            location: location.into(),
        }
    }
}
