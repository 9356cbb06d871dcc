//! Finite-difference gradient checking.
//!
//! Central differences are the project's independent oracle for every
//! backward rule: the acceptance suite drives whole pipelines through these
//! helpers, and module tests use them op by op. Exposed as a normal module
//! (not test-only code) so integration tests and downstream crates can reuse
//! the exact same oracle.

use crate::error::Result;

use super::params::{ParamId, ParamStore};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Default absolute floor inside [`rel_err`]: gradients smaller than this
/// compare on an absolute scale, avoiding 0/0 blowups where the true
/// derivative is (numerically) zero.
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest [`rel_err`] across two gradient buffers.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient buffers must align");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n, floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `loss` with respect to one parameter.
///
/// `loss` must be a pure function of the store (it is re-evaluated twice per
/// coordinate with the parameter perturbed by `+/-step`); the parameter is
/// restored bit-exactly afterwards.
pub fn finite_diff_grad(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    loss: &mut dyn FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = store.get(id).numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let original = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = original + step;
        let up = loss(store)?;
        store.get_mut(id).data_mut()[i] = original - step;
        let down = loss(store)?;
        store.get_mut(id).data_mut()[i] = original;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}
