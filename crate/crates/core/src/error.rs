use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bad magic number {actual:#010x} in {path} (expected {expected:#010x})")]
    BadMagic {
        path: String,
        expected: u32,
        actual: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes of payload, got {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{count} players is too many for exact Shapley (max {max}); use monte_carlo_shapley")]
    TooManyPlayers { count: usize, max: usize },

    #[error("Shapley result is missing sampled client {client}")]
    MissingShapleyValue { client: usize },

    #[error("non-finite model parameters detected at round {round}")]
    NonFiniteParams { round: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
