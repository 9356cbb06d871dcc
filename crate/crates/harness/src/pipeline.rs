//! End-to-end pipeline execution with a full trace.
//!
//! One call runs an image through every stage — caption, tokenize, semantic
//! encode, channel encode, transmit, equalize, channel decode, semantic
//! decode, detokenize, reconstruct — and records the five intermediates
//! that define the frame (caption text, source tokens, transmitted symbols,
//! received symbols, decoded tokens) plus the channel realization and
//! per-stage timings. Any stage failure carries the stage name.

use std::time::Instant;

use rand::Rng;
use semcom_core::channel::{
    draw_noise, draw_realization, ChannelKind, SnrDb, SymbolFrame, SINGULAR_H, UNIT_POWER_TOL,
};
use semcom_core::codecs::{detokenize, tokenize, TokenSequence};
use semcom_core::numerics::Tensor;
use semcom_kb::{CaptionRecord, CaptionSource, ImageRecord, KnowledgeBase};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::system::TrainedSystem;

/// The five intermediates a trace records for each frame, in pipeline
/// order. Everything else in [`PipelineTrace`] is metadata.
pub const TRACE_INTERMEDIATES: [&str; 5] =
    ["caption", "source_tokens", "transmitted", "received", "decoded_tokens"];

/// Pipeline stages in execution order; timings carry exactly these names.
pub const STAGES: [&str; 10] = [
    "caption",
    "tokenize",
    "semantic_encode",
    "channel_encode",
    "transmit",
    "equalize",
    "channel_decode",
    "semantic_decode",
    "detokenize",
    "reconstruct",
];

/// Wall-clock cost of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    /// Stage name from [`STAGES`].
    pub stage: String,
    /// Elapsed microseconds.
    pub micros: u64,
}

/// Everything observable about one frame's trip through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    /// Intermediate 1: caption text at the transmitter.
    pub caption: String,
    /// Intermediate 2: tokenized caption (the transmitted meaning).
    pub source_tokens: Vec<u32>,
    /// Intermediate 3: unit-power symbols on the wire.
    pub transmitted: Vec<f64>,
    /// Intermediate 4: symbols after the channel and equalization.
    pub received: Vec<f64>,
    /// Intermediate 5: greedy token decisions at the receiver.
    pub decoded_tokens: Vec<u32>,
    /// Decoded tokens rendered back to text.
    pub decoded_text: String,
    /// SNR the frame was sent at, in dB.
    pub snr_db: f64,
    /// Fading coefficient the frame saw.
    pub fading: f64,
    /// Noise variance behind the drawn noise.
    pub noise_var: f64,
    /// The exact noise vector added on the wire (kept so a replay can
    /// re-execute the channel stage bit-for-bit).
    pub noise: Vec<f64>,
    /// Per-stage wall-clock timings, one entry per stage in order.
    pub timings: Vec<StageTiming>,
}

impl PipelineTrace {
    /// The trace with timings cleared: the payload two identically seeded
    /// runs agree on exactly (timings are wall-clock and never reproduce).
    pub fn without_timings(&self) -> PipelineTrace {
        PipelineTrace { timings: Vec::new(), ..self.clone() }
    }
}

fn stage<T>(
    name: &'static str,
    timings: &mut Vec<StageTiming>,
    f: impl FnOnce() -> std::result::Result<T, semcom_core::Error>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|source| HarnessError::Stage { stage: name, source });
    timings.push(StageTiming {
        stage: name.to_string(),
        micros: start.elapsed().as_micros() as u64,
    });
    out
}

fn kb_stage<T>(
    name: &'static str,
    timings: &mut Vec<StageTiming>,
    f: impl FnOnce() -> semcom_kb::Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(HarnessError::Kb);
    timings.push(StageTiming {
        stage: name.to_string(),
        micros: start.elapsed().as_micros() as u64,
    });
    out
}

/// Run one image end to end at the given SNR, returning the reconstructed
/// image and the full trace. The channel realization is drawn from `rng`;
/// a deep fade surfaces as a `transmit` stage error so the caller can count
/// the dropped frame.
pub fn run_traced(
    sys: &TrainedSystem,
    kb: &dyn KnowledgeBase,
    img: &ImageRecord,
    snr: SnrDb,
    kind: ChannelKind,
    rng: &mut impl Rng,
) -> Result<(ImageRecord, PipelineTrace)> {
    let mut timings = Vec::with_capacity(STAGES.len());

    let caption = kb_stage("caption", &mut timings, || kb.caption(img))?;
    let tokens = stage("tokenize", &mut timings, || {
        tokenize(&caption.text, &sys.vocab, sys.arch.max_len)
    })?;
    let features = stage("semantic_encode", &mut timings, || {
        sys.codecs.semantic.encode_eager(&sys.store, tokens.ids(), snr)
    })?;
    let symbols = stage("channel_encode", &mut timings, || {
        sys.codecs.channel.encode_eager(&sys.store, &features, snr)
    })?;

    // Transmit by hand (instead of through `transmit`) so the exact noise
    // vector lands in the trace; checks and draw order match the library
    // call bit for bit.
    let start = Instant::now();
    let frame = SymbolFrame::new(symbols.data().to_vec())
        .map_err(|source| HarnessError::Stage { stage: "transmit", source })?;
    let power = frame.power();
    if (power - 1.0).abs() > UNIT_POWER_TOL {
        return Err(HarnessError::Stage {
            stage: "transmit",
            source: semcom_core::Error::Contract(format!(
                "transmit needs a unit-power frame (power = {power})"
            )),
        });
    }
    let real = draw_realization(snr, kind, rng);
    let noise = draw_noise(frame.len(), real.noise_var, rng);
    let rx: Vec<f64> = frame
        .symbols()
        .iter()
        .zip(&noise)
        .map(|(y, n)| real.h * y + n)
        .collect();
    timings.push(StageTiming {
        stage: "transmit".to_string(),
        micros: start.elapsed().as_micros() as u64,
    });
    if real.h.abs() < SINGULAR_H {
        return Err(HarnessError::Stage {
            stage: "transmit",
            source: semcom_core::Error::SingularChannel { h: real.h },
        });
    }

    let equalized = stage("equalize", &mut timings, || {
        let eq: Vec<f64> = rx.iter().map(|v| v / real.h).collect();
        Tensor::new(symbols.shape().to_vec(), eq)
    })?;
    let decoded_features = stage("channel_decode", &mut timings, || {
        sys.codecs.channel.decode_eager(&sys.store, &equalized, snr)
    })?;
    let decoded_tokens = stage("semantic_decode", &mut timings, || {
        sys.codecs.semantic.greedy_decode(&sys.store, &decoded_features, snr)
    })?;
    let decoded_text = stage("detokenize", &mut timings, || {
        let seq = TokenSequence::from_ids(decoded_tokens.clone(), sys.vocab.size())?;
        Ok(detokenize(&seq, &sys.vocab))
    })?;
    let reconstructed = kb_stage("reconstruct", &mut timings, || {
        kb.reconstruct(&CaptionRecord {
            image_id: img.id.clone(),
            text: decoded_text.clone(),
            source: CaptionSource::Mock,
        })
    })?;

    let trace = PipelineTrace {
        caption: caption.text,
        source_tokens: tokens.ids().to_vec(),
        transmitted: frame.symbols().to_vec(),
        received: equalized.data().to_vec(),
        decoded_tokens,
        decoded_text,
        snr_db: snr.db(),
        fading: real.h,
        noise_var: real.noise_var,
        noise,
        timings,
    };
    Ok((reconstructed, trace))
}
