//! Feed-forward channel codec: dense layers alternating with
//! noise-attention modules, the decoder mirroring the encoder.
//!
//! ```text
//!  encoder: [L,D] -> (W1+ReLU -> NAM) .. (Wk -> NAM) -> power_normalize
//!  decoder: [L,k] -> (W1'+ReLU -> NAM) .. (Wk' -> NAM) -> [L,D]
//! ```
//!
//! The last layer of each stack is purely linear (symbols and
//! reconstructed features need the full real line); every layer output
//! passes through its own NAM. The encoder ends with power normalization
//! so emitted frames always satisfy the transmitter's unit-power contract.

use rand::Rng;

use crate::channel::SnrDb;
use crate::error::{Error, Result};
use crate::nam::NamParams;
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, TapeBinding, Tensor};

struct Ff {
    w: ParamId,
    b: ParamId,
    nam: NamParams,
}

/// Parameter handles and dimensions of the channel encoder/decoder pair.
pub struct ChannelCodec {
    feature_dim: usize,
    widths: Vec<usize>,
    enc: Vec<Ff>,
    dec: Vec<Ff>,
}

fn build_stack(
    store: &mut ParamStore,
    prefix: &str,
    dims: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Vec<Ff> {
    dims.iter()
        .enumerate()
        .map(|(i, &(din, dout))| Ff {
            w: store.weight(format!("{prefix}.l{i}.w"), vec![din, dout], rng),
            b: store.bias(format!("{prefix}.l{i}.b"), vec![dout]),
            nam: NamParams::new(store, &format!("{prefix}.l{i}.nam"), dout, None, rng),
        })
        .collect()
}

impl ChannelCodec {
    /// Registers all parameters under the `chan.` prefix. `widths` are the
    /// encoder layer output sizes; the last entry is the symbol dimension
    /// per position, and the decoder dimensions are the exact reverse.
    pub fn new(
        store: &mut ParamStore,
        feature_dim: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Contract("feature dimension must be at least 1".into()));
        }
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Contract(format!(
                "channel codec widths must be non-empty and positive, got {widths:?}"
            )));
        }
        let enc_dims = Self::dims(feature_dim, widths);
        let dec_dims: Vec<(usize, usize)> =
            enc_dims.iter().rev().map(|&(a, b)| (b, a)).collect();
        let enc = build_stack(store, "chan.enc", &enc_dims, rng);
        let dec = build_stack(store, "chan.dec", &dec_dims, rng);
        Ok(ChannelCodec { feature_dim, widths: widths.to_vec(), enc, dec })
    }

    fn dims(feature_dim: usize, widths: &[usize]) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(widths.len());
        let mut din = feature_dim;
        for &w in widths {
            dims.push((din, w));
            din = w;
        }
        dims
    }

    /// Feature dimension D on the semantic side.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Symbols per position emitted by the encoder.
    pub fn symbol_dim(&self) -> usize {
        *self.widths.last().expect("widths are non-empty")
    }

    /// Encoder layer (input, output) dimensions in order.
    pub fn encoder_dims(&self) -> Vec<(usize, usize)> {
        Self::dims(self.feature_dim, &self.widths)
    }

    /// Decoder layer (input, output) dimensions in order; the reverse of
    /// the encoder's with each pair swapped.
    pub fn decoder_dims(&self) -> Vec<(usize, usize)> {
        self.encoder_dims().iter().rev().map(|&(a, b)| (b, a)).collect()
    }

    fn stack_forward(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        stack: &[Ff],
        mut x: NodeId,
        snr: SnrDb,
    ) -> Result<NodeId> {
        for (i, ff) in stack.iter().enumerate() {
            x = tape.matmul(x, bind.node(ff.w))?;
            x = tape.add(x, bind.node(ff.b))?;
            if i + 1 < stack.len() {
                x = tape.relu(x);
            }
            x = ff.nam.forward(tape, bind, x, snr)?;
        }
        Ok(x)
    }

    /// Maps features `[L, D]` to unit-power symbols `[L, symbol_dim]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        features: NodeId,
        snr: SnrDb,
    ) -> Result<NodeId> {
        self.check_width("channel_encode", tape, features, self.feature_dim)?;
        let y = self.stack_forward(tape, bind, &self.enc, features, snr)?;
        Ok(tape.power_normalize(y))
    }

    /// Maps received symbols `[L, symbol_dim]` back to features `[L, D]`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        symbols: NodeId,
        snr: SnrDb,
    ) -> Result<NodeId> {
        self.check_width("channel_decode", tape, symbols, self.symbol_dim())?;
        self.stack_forward(tape, bind, &self.dec, symbols, snr)
    }

    fn check_width(&self, op: &'static str, tape: &Tape, x: NodeId, want: usize) -> Result<()> {
        let shape = tape.shape_of(x);
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::shape(op, format!("{shape:?}, expected [L, {want}]")));
        }
        Ok(())
    }

    /// [`ChannelCodec::encode`] on a throwaway tape.
    pub fn encode_eager(&self, store: &ParamStore, features: &Tensor, snr: SnrDb) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let f = tape.constant(features);
        let out = self.encode(&mut tape, &bind, f, snr)?;
        Ok(tape.to_tensor(out))
    }

    /// [`ChannelCodec::decode`] on a throwaway tape.
    pub fn decode_eager(&self, store: &ParamStore, symbols: &Tensor, snr: SnrDb) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let y = tape.constant(symbols);
        let out = self.decode(&mut tape, &bind, y, snr)?;
        Ok(tape.to_tensor(out))
    }
}
