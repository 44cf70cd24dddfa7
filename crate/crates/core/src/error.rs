use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate affinity row {row}: all candidate distances are zero")]
    DegenerateRow { row: usize },

    #[error("optimization diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate hull: {points} points do not span an area")]
    DegenerateHull { points: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
