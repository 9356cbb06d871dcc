//! Semantic and channel codecs plus their staged training loops.
//!
//! ```text
//!  ids --semantic encode--> f --channel encode--> y --transmit/equalize--> y'
//!                                                            |
//!  ids' <--argmax-- logits <--semantic decode-- g <--channel decode-------+
//! ```
//!
//! Both codecs interleave their layers with SNR-conditioned noise-attention
//! modules; the whole pipeline is differentiable on the gradient tape, so
//! training backpropagates through the (constant) channel realization.

pub mod channel_codec;
pub mod semantic;
pub mod training;
pub mod vocab;

pub use channel_codec::ChannelCodec;
pub use semantic::SemanticCodec;
pub use training::{
    channel_on_tape, crossover_train, train_channel_stage, train_semantic_stage, validation_ce,
    write_curve_csv, CrossoverConfig, CrossoverReport, CurvePoint, RoundRecord, TrainConfig,
    CROSSOVER_MAX_ROUNDS, CROSSOVER_TOL,
};
pub use vocab::{
    detokenize, normalize_words, tokenize, TokenSequence, Vocab, END_ID, PAD_ID, START_ID, UNK_ID,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{equalize, transmit, ChannelKind, ChannelRealization, SnrDb, SymbolFrame};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

/// Dimensions shared by both codecs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Semantic feature dimension D.
    pub feature_dim: usize,
    /// Transformer layers per semantic codec side.
    pub layers: usize,
    /// Attention heads (must divide `feature_dim`).
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of `feature_dim`.
    pub ff_mult: usize,
    /// Maximum sequence length (positional table size).
    pub max_len: usize,
    /// Channel-encoder layer widths; last entry is the per-position symbol
    /// dimension. The decoder mirrors them.
    pub channel_widths: Vec<usize>,
}

impl ArchitectureConfig {
    /// Full-scale preset: 3 layers of 8 heads at dimension 128, channel
    /// widths 256 then 128.
    pub fn paper() -> Self {
        ArchitectureConfig {
            feature_dim: 128,
            layers: 3,
            heads: 8,
            ff_mult: 2,
            max_len: 32,
            channel_widths: vec![256, 128],
        }
    }

    /// Toy preset for fast experiments and tests.
    pub fn toy() -> Self {
        ArchitectureConfig {
            feature_dim: 32,
            layers: 2,
            heads: 4,
            ff_mult: 2,
            max_len: 16,
            channel_widths: vec![64, 32],
        }
    }

    /// Attention head dimension.
    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }

    /// Symbols per position on the wire.
    pub fn symbol_dim(&self) -> usize {
        self.channel_widths.last().copied().unwrap_or(0)
    }

    /// Checks the dimensional invariants.
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.layers == 0 || self.ff_mult == 0 || self.max_len == 0 {
            return Err(Error::Contract(format!("degenerate architecture: {self:?}")));
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 {
            return Err(Error::Contract(format!(
                "head count {} must divide feature dimension {}",
                self.heads, self.feature_dim
            )));
        }
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return Err(Error::Contract(format!(
                "channel widths must be non-empty and positive, got {:?}",
                self.channel_widths
            )));
        }
        Ok(())
    }
}

/// The complete codec pair registered over one parameter store.
pub struct Codecs {
    /// Transformer semantic encoder/decoder.
    pub semantic: SemanticCodec,
    /// Feed-forward channel encoder/decoder.
    pub channel: ChannelCodec,
}

impl Codecs {
    /// Builds both codecs; semantic parameters live under `sem.`, channel
    /// parameters under `chan.`.
    pub fn build(
        store: &mut ParamStore,
        vocab_size: usize,
        arch: &ArchitectureConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        arch.validate()?;
        let semantic = SemanticCodec::new(store, vocab_size, arch, rng)?;
        let channel = ChannelCodec::new(store, arch.feature_dim, &arch.channel_widths, rng)?;
        Ok(Codecs { semantic, channel })
    }

    /// Semantic-side parameters eligible for training (the constant
    /// positional table is excluded).
    pub fn semantic_trainable_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        let pos = self.semantic.pos_param();
        store.ids_with_prefix("sem.").filter(|&id| id != pos).collect()
    }

    /// Channel-side parameters eligible for training.
    pub fn channel_trainable_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix("chan.").collect()
    }
}

/// Every intermediate of one sentence's trip through the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// Semantic features `[L, D]`.
    pub features: Tensor,
    /// Unit-power frame on the wire.
    pub transmitted: SymbolFrame,
    /// Fading/noise realization the frame saw.
    pub realization: ChannelRealization,
    /// Received symbols after equalization, reshaped to `[L, symbol_dim]`.
    pub received: Tensor,
    /// Channel-decoded features `[L, D]`.
    pub decoded_features: Tensor,
    /// Per-position vocabulary logits `[L, V]`.
    pub logits: Tensor,
    /// Greedy token decisions per position.
    pub decoded_ids: Vec<u32>,
}

/// Runs one sentence end to end through the eager pipeline at a given SNR.
/// Deep Rayleigh fades surface as [`Error::SingularChannel`]; callers
/// decide whether to count the frame as dropped or retry.
pub fn run_pipeline(
    store: &ParamStore,
    codecs: &Codecs,
    ids: &[u32],
    snr: SnrDb,
    kind: ChannelKind,
    rng: &mut impl Rng,
) -> Result<PipelineRun> {
    let features = codecs.semantic.encode_eager(store, ids, snr)?;
    let symbols = codecs.channel.encode_eager(store, &features, snr)?;
    let frame = SymbolFrame::new(symbols.data().to_vec())?;
    let (rx, realization) = transmit(&frame, snr, kind, rng)?;
    let eq = equalize(&rx, &realization)?;
    let received = Tensor::new(symbols.shape().to_vec(), eq.symbols().to_vec())?;
    let decoded_features = codecs.channel.decode_eager(store, &received, snr)?;
    let pad = vec![false; ids.len()];
    let logits = codecs.semantic.decode_eager(store, &decoded_features, &pad, snr)?;
    let decoded_ids = codecs.semantic.greedy_decode(store, &decoded_features, snr)?;
    Ok(PipelineRun {
        features,
        transmitted: frame,
        realization,
        received,
        decoded_features,
        logits,
        decoded_ids,
    })
}
