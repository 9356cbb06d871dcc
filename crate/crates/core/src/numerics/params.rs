//! Named parameter storage shared by the codecs, attention modules, the
//! optimizer, and the checkpoint container.
//!
//! A [`ParamStore`] owns every trainable tensor of a system under unique,
//! hierarchical names (`"semantic.enc.layer0.attn.head2.wq"`). Model structs
//! hold lightweight [`ParamId`] handles. Each training step binds the store
//! onto a fresh [`Tape`] and reads gradients back through the same binding,
//! so parameters themselves stay plain tensors between steps.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::{Tensor, INIT_STD};

/// Handle to one named tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered, uniquely named collection of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    /// Empty store.
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor under a unique name.
    ///
    /// Panics on duplicate names: parameter registration happens at
    /// construction time with literal names, so a collision is a programming
    /// error, not an input error.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Registers a Gaussian-initialized weight (std [`INIT_STD`]).
    pub fn weight(&mut self, name: impl Into<String>, shape: Vec<usize>, rng: &mut impl Rng) -> ParamId {
        self.add(name, Tensor::randn(shape, INIT_STD, rng))
    }

    /// Registers an all-zero bias.
    pub fn bias(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Registers a constant-filled tensor (layer-norm gains use 1.0).
    pub fn constant(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    /// Tensor behind a handle.
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Mutable tensor behind a handle.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Name behind a handle.
    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Handle for a name, if registered.
    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of parameters (tensors, not scalars).
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    /// True when nothing is registered.
    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// All handles in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Handles whose names start with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// True when every parameter value is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Order-independent content hash over names, shapes, and exact value
    /// bits. Used to detect parameter changes (e.g. stale memory-pool
    /// features) within a run; not a stable cross-version fingerprint.
    pub fn content_hash(&self) -> u64 {
        self.hash_prefix("")
    }

    /// [`ParamStore::content_hash`] restricted to names under `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> u64 {
        let mut hasher = DefaultHasher::new();
        for (name, t) in self.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            name.hash(&mut hasher);
            t.shape().hash(&mut hasher);
            for &v in t.data() {
                v.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    /// Records every parameter on a tape; `trainable` picks which leaves the
    /// optimizer will update this step (frozen stages pass `false`).
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamId) -> bool) -> TapeBinding {
        let nodes = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(t, trainable(ParamId(i))))
            .collect();
        TapeBinding { nodes }
    }

    /// Overwrites the value of a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[id.0].shape() {
            return Err(Error::shape(
                "param_set",
                format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    t.shape(),
                    self.tensors[id.0].shape()
                ),
            ));
        }
        self.tensors[id.0] = t;
        Ok(())
    }
}

/// Map from [`ParamId`]s to the tape nodes of one training step.
#[derive(Debug, Clone)]
pub struct TapeBinding {
    nodes: Vec<NodeId>,
}

impl TapeBinding {
    /// Tape node carrying this parameter's value for the bound step.
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }
}
