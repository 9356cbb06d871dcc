//! Numeric substrate: tensors, reverse-mode autodiff, Adam, checkpoints.
//!
//! Everything trainable in the simulator is built from this module's pieces:
//!
//! * [`Tensor`] -- dense row-major `f64` values (parameters, features).
//! * [`Tape`] -- per-step autodiff graph; forward math is identical whether
//!   or not `backward` ever runs.
//! * [`ParamStore`] / [`TapeBinding`] -- named parameter registry and its
//!   per-step projection onto a tape.
//! * [`AdamState`] -- bias-corrected Adam over store handles.
//! * [`checkpoint`] -- flat named-tensor container, bit-exact round trips.
//! * [`gradcheck`] -- central-difference oracle used by the test suites.
//!
//! Determinism: given the same seed and inputs, every function here is
//! bit-reproducible. There is no threading, no platform-dependent math, and
//! iteration order is always registration order.

mod optim;
mod params;
mod tape;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;

pub use optim::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore, TapeBinding};
pub use tape::{NodeId, Tape, LAYER_NORM_EPS};
pub use tensor::{Tensor, INIT_STD};

pub(crate) use tape::power_scale;
