//! Noise attention: SNR-conditioned multiplicative feature calibration.
//!
//! Each host layer owns one of these modules. A three-layer projection turns
//! the scalar link SNR (in dB) into a gate direction
//!
//! ```text
//! v = Sigmoid(W3 . ReLU(W2 . ReLU(W1 . r + b1) + b2) + b3)
//! ```
//!
//! and a fourth layer transforms the host features, `e = W4 . G + b4`. The
//! scaling factor is the elementwise product squashed back to a gate,
//! `K = Sigmoid(e * v)`, and the calibrated output is `A_i = K_i * G_i`.
//! Every gate element lies strictly inside (0,1), so calibration is a strict
//! contraction of each feature's magnitude -- attenuating what the current
//! noise level makes unreliable while preserving feature shape.
//!
//! The gate must cover every feature for `A_i = K_i * G_i` to be total, so
//! the projection width equals the host feature dimension; hidden widths
//! keep the reference architecture's 56:128 ratio against its 128-wide host
//! (see [`NamParams::hidden_for`]). When the host processes a sequence the
//! module applies position-wise with shared parameters.

use rand::Rng;

use crate::channel::SnrDb;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, TapeBinding, Tensor};

/// Parameter handles and dimensions of one noise-attention module.
#[derive(Debug, Clone)]
pub struct NamParams {
    host_dim: usize,
    hidden: (usize, usize),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
    w4: ParamId,
    b4: ParamId,
}

impl NamParams {
    /// Hidden widths for a host dimension, preserving the reference ratio
    /// chain (56, 128 against a 128-wide host).
    pub fn hidden_for(host_dim: usize) -> (usize, usize) {
        let h1 = ((host_dim * 56 + 64) / 128).max(1); // round(host * 56/128)
        (h1, host_dim)
    }

    /// Registers a module's parameters under `prefix` in the store.
    ///
    /// All shapes are derived from `host_dim` here, so a constructed module
    /// can never hit a dimension mismatch at call time. Weights are
    /// Gaussian-initialized, biases zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        host_dim: usize,
        hidden: Option<(usize, usize)>,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(host_dim > 0, "host dimension must be positive");
        let (h1, h2) = hidden.unwrap_or_else(|| Self::hidden_for(host_dim));
        assert!(h1 > 0 && h2 > 0, "hidden widths must be positive");
        NamParams {
            host_dim,
            hidden: (h1, h2),
            w1: store.weight(format!("{prefix}.w1"), vec![1, h1], rng),
            b1: store.bias(format!("{prefix}.b1"), vec![h1]),
            w2: store.weight(format!("{prefix}.w2"), vec![h1, h2], rng),
            b2: store.bias(format!("{prefix}.b2"), vec![h2]),
            w3: store.weight(format!("{prefix}.w3"), vec![h2, host_dim], rng),
            b3: store.bias(format!("{prefix}.b3"), vec![host_dim]),
            w4: store.weight(format!("{prefix}.w4"), vec![host_dim, host_dim], rng),
            b4: store.bias(format!("{prefix}.b4"), vec![host_dim]),
        }
    }

    /// Feature dimension of the host layer (also the gate width).
    pub fn host_dim(&self) -> usize {
        self.host_dim
    }

    /// Hidden widths of the SNR projection.
    pub fn hidden(&self) -> (usize, usize) {
        self.hidden
    }

    /// Projects the scalar SNR into the gate direction `v` (`[1, host_dim]`,
    /// every element strictly inside (0,1)).
    pub fn project_snr(&self, tape: &mut Tape, bind: &TapeBinding, snr: SnrDb) -> NodeId {
        let r = tape.constant(&Tensor::new(vec![1, 1], vec![snr.db()]).expect("1x1"));
        let z1 = tape.matmul(r, bind.node(self.w1)).expect("shapes fixed at construction");
        let z1 = tape.add(z1, bind.node(self.b1)).expect("bias row");
        let a1 = tape.relu(z1);
        let z2 = tape.matmul(a1, bind.node(self.w2)).expect("shapes fixed at construction");
        let z2 = tape.add(z2, bind.node(self.b2)).expect("bias row");
        let a2 = tape.relu(z2);
        let z3 = tape.matmul(a2, bind.node(self.w3)).expect("shapes fixed at construction");
        let z3 = tape.add(z3, bind.node(self.b3)).expect("bias row");
        tape.sigmoid(z3)
    }

    /// Applies the gate to host features: `e = G.W4 + b4`,
    /// `K = Sigmoid(e * v)`, `A = K * G`. `G` is `[positions, host_dim]`
    /// and the same gate direction is shared across positions.
    pub fn scale_features(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        g: NodeId,
        v: NodeId,
    ) -> Result<NodeId> {
        let shape = tape.shape_of(g);
        if shape.last().copied() != Some(self.host_dim) {
            return Err(Error::shape(
                "nam_scale",
                format!("features {shape:?} vs host dim {}", self.host_dim),
            ));
        }
        let e = tape.matmul(g, bind.node(self.w4))?;
        let e = tape.add(e, bind.node(self.b4))?;
        let ev = tape.mul(e, v)?; // v broadcasts across positions
        let k = tape.sigmoid(ev);
        tape.mul(k, g)
    }

    /// Full module: project the SNR, then calibrate the features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        g: NodeId,
        snr: SnrDb,
    ) -> Result<NodeId> {
        let v = self.project_snr(tape, bind, snr);
        self.scale_features(tape, bind, g, v)
    }

    /// Eager convenience: runs [`NamParams::forward`] on a throwaway tape.
    pub fn forward_eager(&self, store: &ParamStore, g: &Tensor, snr: SnrDb) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let gn = tape.constant(g);
        let out = self.forward(&mut tape, &bind, gn, snr)?;
        Ok(tape.to_tensor(out))
    }
}
