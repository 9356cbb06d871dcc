//! Harness error type and its mapping onto process exit codes.
//!
//! Two families matter to callers: problems with what the user asked for
//! (exit code 2 — bad flags, unreadable or invalid configuration, missing
//! input files) and problems while executing a valid request (exit code 1).
//! [`HarnessError::one_line`] renders any error as a single line so scripts
//! can parse stderr reliably.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HarnessError>;

/// Errors raised by the experiment harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// The request itself is unusable: bad config file, bad flag values,
    /// missing input paths. Maps to exit code 2.
    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage failed; the stage name travels with the cause.
    #[error("stage {stage}: {source}")]
    Stage {
        /// Pipeline stage that failed (e.g. `"transmit"`).
        stage: &'static str,
        /// Underlying simulator error.
        source: semcom_core::Error,
    },

    /// Simulator failure outside a named pipeline stage.
    #[error("core: {0}")]
    Core(#[from] semcom_core::Error),

    /// Knowledge-base backend failure.
    #[error("kb: {0}")]
    Kb(#[from] semcom_kb::KbError),

    /// File-system failure during a run.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Any other runtime failure (manifest verification, missing
    /// checkpoints where required, ...).
    #[error("run: {0}")]
    Run(String),
}

impl HarnessError {
    /// Exit code the CLI should terminate with: 2 for request problems,
    /// 1 for execution problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }

    /// The error rendered on one line (newlines collapsed to spaces),
    /// prefixed with a stable `semcom: error:` marker.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("semcom: error: {msg}")
    }
}
