//! Core library of a deterministic, seedable simulator for a cross-modal
//! semantic communication pipeline.
//!
//! The pipeline under study transmits the *meaning* of an image rather than
//! its pixels: a captioner turns the image into text, a semantic codec turns
//! text into channel symbols conditioned on the link quality, the symbols
//! cross a noisy channel, and the receiving side inverts each step.
//!
//! ```text
//!  image --caption--> text --tokenize--> s
//!     s --semantic_encode(mu)--> features --channel_encode(mu)--> y
//!     y --transmit (AWGN | Rayleigh)--> y_hat --equalize--> y_eq
//!  y_eq --channel_decode(mu)--> features' --semantic_decode(mu)--> s_hat
//!  s_hat --detokenize--> text' --reconstruct--> image'
//! ```
//!
//! | module     | contents                                                  |
//! |------------|-----------------------------------------------------------|
//! | [`numerics`] | tensors, autodiff tape, Adam, checkpoints, grad oracle  |
//! | [`channel`]  | SNR handling, power normalization, AWGN/Rayleigh links  |
//! | [`nam`]      | SNR-conditioned feature scaling (noise attention)       |
//! | [`codecs`]   | text codec, transformer semantic codec, channel codec,  |
//! |              | two-stage and crossover training                         |
//! | [`med`]      | short/long-term replay memory with kernel consolidation |
//! | [`metrics`]  | BLEU variants, semantic quality ratio, compression,     |
//! |              | continual-learning evaluation matrices                   |
//!
//! Everything is seeded through [`rng::RunRng`]; identical seeds and inputs
//! give bit-identical outputs.

pub mod channel;
pub mod codecs;
pub mod error;
pub mod med;
pub mod metrics;
pub mod nam;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use rng::{RunRng, Stream};
