//! Error type shared by the simulator core.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! deliberately coarse: callers branch on *kind* (shape bug vs. degenerate
//! data vs. a dropped channel frame), not on message text.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch {
        /// Operation that rejected its operands (e.g. `"matmul"`).
        op: &'static str,
        /// Human-readable description of the offending shapes.
        detail: String,
    },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is well-formed but carries no usable information
    /// (all-zero frame, empty token sequence, empty memory pool, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Fading coefficient too close to zero to equalize; the frame is
    /// dropped and must be counted by the caller.
    #[error("singular channel: |h| = {h:e} below threshold, frame dropped")]
    SingularChannel {
        /// The offending fading coefficient.
        h: f64,
    },

    /// A loss or parameter became NaN/inf; training must abort.
    #[error("non-finite value in {0}; run aborted")]
    NonFinite(String),

    /// Checkpoint file is malformed, truncated, or has an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying file-system failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used throughout the crate for shape complaints.
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
