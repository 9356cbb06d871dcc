//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    /// Learning rate.
    pub lr: f64,
    /// Exponential decay for the first-moment estimate.
    pub beta1: f64,
    /// Exponential decay for the second-moment estimate.
    pub beta2: f64,
    /// Denominator fuzz.
    pub eps: f64,
}

impl AdamConfig {
    /// Standard coefficients with a caller-chosen learning rate.
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moment buffers per parameter plus the
/// shared step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state sized to a parameter store; moments start at zero.
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        AdamState { cfg, step: 0, m, v }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Configured hyper-parameters.
    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Applies one update from `(parameter, gradient)` pairs.
    ///
    /// Parameters not listed keep both their values and their moments, which
    /// is what stage freezing relies on. Gradient lengths must match the
    /// parameter buffers exactly.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, &[f64])]) -> Result<()> {
        for (id, g) in grads {
            if g.len() != store.get(*id).numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "{}: gradient has {} values, parameter has {}",
                        store.name(*id),
                        g.len(),
                        store.get(*id).numel()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (id, g) in grads {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let data = store.get_mut(*id).data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn first_step_displacement_is_the_learning_rate() {
        // Single parameter at 0, constant gradient 1, lr 0.1: bias-corrected
        // m_hat = v_hat = 1, so the first step moves by lr/(1+eps) ~ 0.1.
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(0.0));
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &store);
        let g = [1.0];
        adam.step(&mut store, &[(id, &g)]).unwrap();
        let moved = store.get(id).data()[0];
        assert!(
            (moved + 0.1).abs() < 1e-8,
            "first-step displacement {moved} should be -0.1"
        );
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn unlisted_parameters_are_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.5));
        let b = store.add("b", Tensor::scalar(-2.5));
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &store);
        let g = [1.0];
        for _ in 0..5 {
            adam.step(&mut store, &[(a, &g)]).unwrap();
        }
        assert_eq!(store.get(b).data()[0], -2.5, "frozen parameter drifted");
        assert_ne!(store.get(a).data()[0], 1.5);
    }

    #[test]
    fn gradient_shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(vec![3]));
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &store);
        let g = [1.0, 2.0];
        assert!(adam.step(&mut store, &[(id, &g)]).is_err());
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        // loss = sum(p^2); gradient 2p. A few hundred Adam steps should land
        // near the minimum from any moderate start.
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut adam = AdamState::new(AdamConfig::with_lr(0.05), &store);
        for _ in 0..400 {
            let g: Vec<f64> = store.get(id).data().iter().map(|&p| 2.0 * p).collect();
            adam.step(&mut store, &[(id, &g)]).unwrap();
        }
        for &p in store.get(id).data() {
            assert!(p.abs() < 1e-3, "did not converge: {p}");
        }
    }
}
