//! Experiment harness tying the simulator together: configuration
//! presets, knowledge-base-backed corpora, end-to-end training, the
//! traced single-image pipeline, the BLEU-vs-SNR sweep, the
//! continual-learning protocol, and per-run output manifests.
//!
//! The `semcom` binary in this crate exposes all of it as subcommands;
//! everything here is also usable as a library (the integration and
//! acceptance suites drive it directly).

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod pipeline;
pub mod system;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use system::TrainedSystem;
