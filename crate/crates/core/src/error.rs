//! Error type shared by all modules of the crate.

/// Errors produced by tensor, Holt-Winters, batch and online operations.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// Shapes of two arguments do not line up (tensor vs. mask, factor
    /// matrices vs. data, vector lengths, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A mode index is outside `0..order`.
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    /// Factor matrices disagree on the number of columns.
    #[error("rank mismatch: {0}")]
    RankMismatch(String),

    /// A parameter is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A fitting routine was given fewer time steps than it requires.
    #[error("insufficient history: need at least {needed} time steps, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    /// NaN or infinity encountered in an input.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A quantity whose definition divides by a zero norm.
    #[error("undefined result: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
