use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("transport marginals do not match: source mass {source_mass}, target mass {target_mass}")]
    MarginalMismatch { source_mass: f64, target_mass: f64 },

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch(_) => "invalid",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::DegenerateGeometry(_) | Error::EmptyCluster(_) => "geometry",
            Error::MarginalMismatch { .. } => "transport",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
