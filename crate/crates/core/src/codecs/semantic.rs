//! Transformer semantic codec: token embeddings plus alternating
//! pre-norm transformer layers and noise-attention modules on both the
//! encoder and decoder sides.
//!
//! ```text
//!            encoder                          decoder
//!  ids -> embed+pos -> [layer -> NAM]xN   f -> +pos -> [layer -> NAM]xN -> logits
//! ```
//!
//! Each layer is pre-norm: `x + Attn(LN(x))` then `x + FF(LN(x))`, with
//! per-head projections summed through per-head output maps (equivalent to
//! the concatenated form). Attention columns at padding positions are
//! masked with a large negative constant, so appending pad tokens never
//! changes the representation of real positions -- exactly, not just
//! approximately, because zero attention weights are skipped in the matmul
//! kernel.
//!
//! The decoder is non-causal: it reads the full received feature frame and
//! emits one logit row per position; greedy decoding is an argmax per row,
//! keeping inference deterministic.

use rand::Rng;

use crate::channel::SnrDb;
use crate::error::{Error, Result};
use crate::nam::NamParams;
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, TapeBinding, Tensor, LAYER_NORM_EPS};

use super::vocab::PAD_ID;
use super::ArchitectureConfig;

/// Additive mask for attention logits at padded key positions. Large
/// enough that `exp` underflows to exactly zero after max-subtraction.
const MASK_NEG: f64 = -1e30;

/// Embedding initialization scale; an order larger than the generic weight
/// init so token identity is visible against the positional signal at toy
/// dimensions.
const EMBED_STD: f64 = 0.1;

/// Scale applied to the sinusoidal positional table, matching the
/// embedding magnitude.
const POS_SCALE: f64 = 0.1;

struct Head {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

struct Layer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    heads: Vec<Head>,
    attn_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    nam: NamParams,
}

/// Parameter handles and dimensions of the semantic encoder/decoder pair.
pub struct SemanticCodec {
    vocab_size: usize,
    feature_dim: usize,
    head_dim: usize,
    max_len: usize,
    embed: ParamId,
    pos: ParamId,
    enc: Vec<Layer>,
    dec: Vec<Layer>,
    out_w: ParamId,
    out_b: ParamId,
}

fn positional_table(max_len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; max_len * dim];
    for p in 0..max_len {
        for i in 0..dim {
            let angle = p as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            data[p * dim + i] = POS_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![max_len, dim], data).expect("positional table shape")
}

fn attention_mask(pad: &[bool]) -> Tensor {
    let l = pad.len();
    let mut data = vec![0.0; l * l];
    for (j, &is_pad) in pad.iter().enumerate() {
        if is_pad {
            for i in 0..l {
                data[i * l + j] = MASK_NEG;
            }
        }
    }
    Tensor::new(vec![l, l], data).expect("attention mask shape")
}

fn build_layer(
    store: &mut ParamStore,
    prefix: &str,
    arch: &ArchitectureConfig,
    rng: &mut impl Rng,
) -> Layer {
    let d = arch.feature_dim;
    let dh = arch.head_dim();
    let ff = arch.ff_mult * d;
    let heads = (0..arch.heads)
        .map(|h| Head {
            wq: store.weight(format!("{prefix}.h{h}.wq"), vec![d, dh], rng),
            wk: store.weight(format!("{prefix}.h{h}.wk"), vec![d, dh], rng),
            wv: store.weight(format!("{prefix}.h{h}.wv"), vec![d, dh], rng),
            wo: store.weight(format!("{prefix}.h{h}.wo"), vec![dh, d], rng),
        })
        .collect();
    Layer {
        ln1_g: store.add(format!("{prefix}.ln1.g"), Tensor::full(vec![d], 1.0)),
        ln1_b: store.bias(format!("{prefix}.ln1.b"), vec![d]),
        heads,
        attn_b: store.bias(format!("{prefix}.attn.b"), vec![d]),
        ln2_g: store.add(format!("{prefix}.ln2.g"), Tensor::full(vec![d], 1.0)),
        ln2_b: store.bias(format!("{prefix}.ln2.b"), vec![d]),
        ff_w1: store.weight(format!("{prefix}.ff.w1"), vec![d, ff], rng),
        ff_b1: store.bias(format!("{prefix}.ff.b1"), vec![ff]),
        ff_w2: store.weight(format!("{prefix}.ff.w2"), vec![ff, d], rng),
        ff_b2: store.bias(format!("{prefix}.ff.b2"), vec![d]),
        nam: NamParams::new(store, &format!("{prefix}.nam"), d, None, rng),
    }
}

impl SemanticCodec {
    /// Registers all parameters under the `sem.` prefix.
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        arch: &ArchitectureConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        arch.validate()?;
        if vocab_size <= super::vocab::RESERVED_TOKENS.len() {
            return Err(Error::Contract(format!(
                "vocabulary of size {vocab_size} holds nothing beyond the reserved tokens"
            )));
        }
        let d = arch.feature_dim;
        let embed = store.add("sem.embed", Tensor::randn(vec![vocab_size, d], EMBED_STD, rng));
        let pos = store.add("sem.pos", positional_table(arch.max_len, d));
        let enc = (0..arch.layers)
            .map(|i| build_layer(store, &format!("sem.enc.l{i}"), arch, rng))
            .collect();
        let dec = (0..arch.layers)
            .map(|i| build_layer(store, &format!("sem.dec.l{i}"), arch, rng))
            .collect();
        let out_w = store.weight("sem.out.w", vec![d, vocab_size], rng);
        let out_b = store.bias("sem.out.b", vec![vocab_size]);
        Ok(SemanticCodec {
            vocab_size,
            feature_dim: d,
            head_dim: arch.head_dim(),
            max_len: arch.max_len,
            embed,
            pos,
            enc,
            dec,
            out_w,
            out_b,
        })
    }

    /// Feature dimension D.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Vocabulary size the output projection targets.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Maximum supported sequence length.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// The positional table's parameter id (constant; excluded from
    /// training updates).
    pub fn pos_param(&self) -> ParamId {
        self.pos
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Degenerate("cannot encode an empty sequence".into()));
        }
        if ids.len() > self.max_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds max length {}",
                ids.len(),
                self.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        layer: &Layer,
        x: NodeId,
        mask: NodeId,
    ) -> Result<NodeId> {
        let h = tape.layer_norm(x, bind.node(layer.ln1_g), bind.node(layer.ln1_b), LAYER_NORM_EPS)?;
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        let mut attn: Option<NodeId> = None;
        for head in &layer.heads {
            let q = tape.matmul(h, bind.node(head.wq))?;
            let k = tape.matmul(h, bind.node(head.wk))?;
            let v = tape.matmul(h, bind.node(head.wv))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.scale(scores, inv_sqrt);
            let masked = tape.add(scaled, mask)?;
            let weights = tape.softmax(masked);
            let ctx = tape.matmul(weights, v)?;
            let out = tape.matmul(ctx, bind.node(head.wo))?;
            attn = Some(match attn {
                Some(acc) => tape.add(acc, out)?,
                None => out,
            });
        }
        let attn = tape.add(attn.expect("at least one head"), bind.node(layer.attn_b))?;
        let x = tape.add(x, attn)?;

        let h2 = tape.layer_norm(x, bind.node(layer.ln2_g), bind.node(layer.ln2_b), LAYER_NORM_EPS)?;
        let f = tape.matmul(h2, bind.node(layer.ff_w1))?;
        let f = tape.add(f, bind.node(layer.ff_b1))?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, bind.node(layer.ff_w2))?;
        let f = tape.add(f, bind.node(layer.ff_b2))?;
        tape.add(x, f)
    }

    fn stack_forward(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        layers: &[Layer],
        mut x: NodeId,
        pad: &[bool],
        snr: SnrDb,
    ) -> Result<NodeId> {
        let mask = {
            let m = attention_mask(pad);
            tape.constant(&m)
        };
        for layer in layers {
            x = self.layer_forward(tape, bind, layer, x, mask)?;
            x = layer.nam.forward(tape, bind, x, snr)?;
        }
        Ok(x)
    }

    /// Encodes token ids into per-position features `[L, D]`, every layer
    /// output passing through its NAM conditioned on the SNR.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        ids: &[u32],
        snr: SnrDb,
    ) -> Result<NodeId> {
        self.check_ids(ids)?;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = tape.gather_rows(bind.node(self.embed), &idx)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather_rows(bind.node(self.pos), &positions)?;
        let x = tape.add(tok, pos)?;
        let pad: Vec<bool> = ids.iter().map(|&i| i == PAD_ID).collect();
        self.stack_forward(tape, bind, &self.enc, x, &pad, snr)
    }

    /// Decodes received features `[L, D]` into per-position logits
    /// `[L, vocab]`. `pad` marks positions whose loss is masked; it must
    /// align with the feature rows.
    pub fn decode(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        features: NodeId,
        pad: &[bool],
        snr: SnrDb,
    ) -> Result<NodeId> {
        let shape = tape.shape_of(features).to_vec();
        if shape != [pad.len(), self.feature_dim] {
            return Err(Error::shape(
                "semantic_decode",
                format!("features {shape:?} vs expected [{}, {}]", pad.len(), self.feature_dim),
            ));
        }
        if pad.is_empty() {
            return Err(Error::Degenerate("cannot decode an empty frame".into()));
        }
        if pad.len() > self.max_len {
            return Err(Error::Contract(format!(
                "frame of {} positions exceeds max length {}",
                pad.len(),
                self.max_len
            )));
        }
        let positions: Vec<usize> = (0..pad.len()).collect();
        let pos = tape.gather_rows(bind.node(self.pos), &positions)?;
        let x = tape.add(features, pos)?;
        let x = self.stack_forward(tape, bind, &self.dec, x, pad, snr)?;
        let logits = tape.matmul(x, bind.node(self.out_w))?;
        tape.add(logits, bind.node(self.out_b))
    }

    /// [`SemanticCodec::encode`] on a throwaway tape.
    pub fn encode_eager(&self, store: &ParamStore, ids: &[u32], snr: SnrDb) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let out = self.encode(&mut tape, &bind, ids, snr)?;
        Ok(tape.to_tensor(out))
    }

    /// [`SemanticCodec::decode`] on a throwaway tape.
    pub fn decode_eager(
        &self,
        store: &ParamStore,
        features: &Tensor,
        pad: &[bool],
        snr: SnrDb,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let f = tape.constant(features);
        let out = self.decode(&mut tape, &bind, f, pad, snr)?;
        Ok(tape.to_tensor(out))
    }

    /// Greedy decoding: argmax over each logit row (first index on ties).
    pub fn greedy_decode(&self, store: &ParamStore, features: &Tensor, snr: SnrDb) -> Result<Vec<u32>> {
        let rows = features.rows();
        let pad = vec![false; rows];
        let logits = self.decode_eager(store, features, &pad, snr)?;
        Ok(logits
            .data()
            .chunks(self.vocab_size)
            .map(|row| {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RunRng, Stream};

    fn toy_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            feature_dim: 16,
            layers: 2,
            heads: 2,
            ff_mult: 2,
            max_len: 8,
            channel_widths: vec![20, 12],
        }
    }

    fn build(seed: u64) -> (ParamStore, SemanticCodec) {
        let mut rng = RunRng::new(seed).stream(Stream::Init);
        let mut store = ParamStore::new();
        let codec = SemanticCodec::new(&mut store, 13, &toy_arch(), &mut rng).unwrap();
        (store, codec)
    }

    fn softmax_row(row: &[f64]) -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / s).collect()
    }

    #[test]
    fn encode_and_decode_have_the_contracted_shapes() {
        let (store, codec) = build(7);
        let ids = [4, 5, 6, 7, 8];
        let f = codec.encode_eager(&store, &ids, SnrDb(10.0)).unwrap();
        assert_eq!(f.shape(), &[5, 16]);
        assert!(f.is_finite());

        let logits = codec.decode_eager(&store, &f, &[false; 5], SnrDb(10.0)).unwrap();
        assert_eq!(logits.shape(), &[5, 13]);
        for row in logits.data().chunks(13) {
            let p = softmax_row(row);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_inputs_give_bit_identical_outputs() {
        let (store, codec) = build(8);
        let ids = [4, 9, 4];
        let a = codec.encode_eager(&store, &ids, SnrDb(3.0)).unwrap();
        let b = codec.encode_eager(&store, &ids, SnrDb(3.0)).unwrap();
        assert_eq!(a, b);
        // Rebuilding from the same seed reproduces the parameters exactly.
        let (store2, codec2) = build(8);
        let c = codec2.encode_eager(&store2, &ids, SnrDb(3.0)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn distinct_snrs_reach_the_nams_and_change_the_output() {
        let (store, codec) = build(9);
        let ids = [4, 5, 6];
        let low = codec.encode_eager(&store, &ids, SnrDb(-5.0)).unwrap();
        let high = codec.encode_eager(&store, &ids, SnrDb(20.0)).unwrap();
        assert_ne!(low.data(), high.data(), "NAM conditioning must be wired through");
    }

    #[test]
    fn appending_pads_leaves_real_positions_bit_identical() {
        let (store, codec) = build(10);
        let ids = [4, 5, 6];
        let mut padded = ids.to_vec();
        padded.extend([PAD_ID; 3]);

        let snr = SnrDb(7.0);
        let plain = codec.encode_eager(&store, &ids, snr).unwrap();
        let with_pads = codec.encode_eager(&store, &padded, snr).unwrap();
        let d = codec.feature_dim();
        assert_eq!(
            &plain.data()[..],
            &with_pads.data()[..ids.len() * d],
            "masked attention must keep real encoder rows exact"
        );

        // Same through the decoder: real logit rows unchanged.
        let logits_plain = codec.decode_eager(&store, &plain, &[false; 3], snr).unwrap();
        let pad_mask = [false, false, false, true, true, true];
        let logits_padded = codec.decode_eager(&store, &with_pads, &pad_mask, snr).unwrap();
        let v = codec.vocab_size();
        assert_eq!(&logits_plain.data()[..], &logits_padded.data()[..3 * v]);
    }

    #[test]
    fn eager_path_matches_the_taped_path() {
        let (store, codec) = build(11);
        let ids = [4, 5, 6, 7];
        let snr = SnrDb(5.0);
        let eager = codec.encode_eager(&store, &ids, snr).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| true);
        let node = codec.encode(&mut tape, &bind, &ids, snr).unwrap();
        assert_eq!(eager, tape.to_tensor(node));
    }

    #[test]
    fn greedy_decode_is_the_per_row_argmax() {
        let (store, codec) = build(12);
        let f = codec.encode_eager(&store, &[4, 5, 6], SnrDb(10.0)).unwrap();
        let ids = codec.greedy_decode(&store, &f, SnrDb(10.0)).unwrap();
        let logits = codec.decode_eager(&store, &f, &[false; 3], SnrDb(10.0)).unwrap();
        for (row, &id) in logits.data().chunks(codec.vocab_size()).zip(&ids) {
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(row[id as usize], best);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (store, codec) = build(13);
        assert!(codec.encode_eager(&store, &[], SnrDb(0.0)).is_err());
        assert!(codec.encode_eager(&store, &[4; 9], SnrDb(0.0)).is_err(), "max_len is 8");
        assert!(codec.encode_eager(&store, &[13], SnrDb(0.0)).is_err(), "vocab is 13");
        let f = Tensor::zeros(vec![3, 16]);
        assert!(codec.decode_eager(&store, &f, &[false; 4], SnrDb(0.0)).is_err());
        let mut rng = RunRng::new(1).stream(Stream::Init);
        let mut store2 = ParamStore::new();
        let bad = ArchitectureConfig { heads: 3, ..toy_arch() };
        assert!(SemanticCodec::new(&mut store2, 13, &bad, &mut rng).is_err());
    }
}
