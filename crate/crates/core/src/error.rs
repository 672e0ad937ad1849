use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The ball of radius `(1+δ)r` around the cube center leaves `[0,1]^d`.
    #[error("radial formula invalid: support radius {support} exceeds 1/2")]
    RadialFormulaInvalid { support: f64 },

    #[error("degenerate kernel: {0}")]
    Degenerate(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("config error in {path}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Config { path: String, line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
