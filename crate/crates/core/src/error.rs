use thiserror::Error;

/// Errors raised by the registration pipeline and its harness.
#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate depth {depth:.3e} mm: model point lies on or behind the camera plane; adjust the initial translation")]
    DegenerateDepth { depth: f64 },

    #[error("covariance is singular or not positive definite: {0}")]
    SingularCovariance(String),

    #[error("no feasible pose on the traversal grid")]
    NoFeasiblePose,

    #[error("insufficient correspondences: {found} distinct model points matched, at least 3 required")]
    InsufficientCorrespondences { found: usize },

    #[error("cross-covariance rank {rank} is below 2")]
    RankDeficient { rank: usize },

    #[error("invalid input shape: {0}")]
    InputShape(String),

    #[error("scene places points behind the camera after {retries} retries")]
    DegenerateScene { retries: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
