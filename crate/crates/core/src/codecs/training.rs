//! Staged training: channel codec first, semantic codec second, alternating
//! in crossover rounds until the validation loss stops improving.
//!
//! Stage 1 trains the channel codec (and its NAMs) by minimizing the
//! mean-squared reconstruction error of semantic features pushed through
//! the simulated noisy channel. A mutual-information objective is sometimes
//! described for this stage; it is unspecified enough to be ambiguous, so
//! the MSE surrogate -- which maximizes effective information flow through
//! the channel -- stands in, and the training entry points keep the
//! objective isolated in one place should an MI estimator be substituted.
//!
//! Stage 2 trains the semantic codec (and its NAMs) end to end with masked
//! cross-entropy through the *frozen* channel codec: channel parameters
//! stay on the tape (gradients flow through them) but are excluded from
//! optimizer updates, which leaves them bit-identical.
//!
//! The channel itself is applied on-tape as `scale(y, h) + noise` followed
//! by `scale(1/h)` with the realization drawn eagerly -- the same draw
//! functions the evaluation path uses, so train and test see identical
//! channel statistics for a given RNG stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    draw_noise, draw_realization, ChannelKind, ChannelRealization, SnrDb, SnrDist, SINGULAR_H,
};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::rng::{RunRng, Stream};

use super::vocab::TokenSequence;
use super::Codecs;

/// Crossover stops once the relative validation-CE improvement over a full
/// round falls below this tolerance.
pub const CROSSOVER_TOL: f64 = 1e-3;

/// Hard cap on crossover rounds; hitting it sets the non-converged flag.
pub const CROSSOVER_MAX_ROUNDS: usize = 20;

/// Attempts to draw a non-singular fading realization before giving up.
const FADING_REDRAWS: usize = 1000;

/// Hyper-parameters of one training stage invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer steps.
    pub steps: usize,
    /// Samples per step.
    pub batch: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// SNR distribution sampled once per step.
    pub snr: SnrDist,
    /// Fading model during training.
    pub kind: ChannelKind,
}

impl TrainConfig {
    /// Checks field ranges.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Contract(format!(
                "training needs positive steps and batch, got {} and {}",
                self.steps, self.batch
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Contract(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.snr.validate()
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Step index (global across stages when produced by crossover).
    pub step: usize,
    /// 1 = channel stage, 2 = semantic stage.
    pub stage: u8,
    /// Batch loss at this step.
    pub loss: f64,
    /// SNR sampled for this step, in dB.
    pub snr_db: f64,
}

/// Serializes a training curve as `step,stage,loss,snr_db`.
pub fn write_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,stage,loss,snr_db\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.step, p.stage, p.loss, p.snr_db));
    }
    out
}

/// Applies one channel realization to an on-tape symbol frame with perfect
/// CSI equalization: `(h*y + n) / h`. The noise tensor is a constant leaf,
/// so gradients flow through the fading scale only.
pub fn channel_on_tape(
    tape: &mut Tape,
    y: NodeId,
    real: &ChannelRealization,
    noise: &Tensor,
) -> Result<NodeId> {
    if real.h.abs() < SINGULAR_H {
        return Err(Error::SingularChannel { h: real.h });
    }
    if tape.shape_of(y) != noise.shape() {
        return Err(Error::shape(
            "channel_on_tape",
            format!("symbols {:?} vs noise {:?}", tape.shape_of(y), noise.shape()),
        ));
    }
    let faded = tape.scale(y, real.h);
    let n = tape.constant(noise);
    let noisy = tape.add(faded, n)?;
    Ok(tape.scale(noisy, 1.0 / real.h))
}

fn draw_usable_realization(
    snr: SnrDb,
    kind: ChannelKind,
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    for _ in 0..FADING_REDRAWS {
        let real = draw_realization(snr, kind, rng);
        if real.h.abs() >= SINGULAR_H {
            return Ok(real);
        }
    }
    Err(Error::Contract(format!(
        "no usable fading coefficient in {FADING_REDRAWS} draws"
    )))
}

fn trainable_mask(store: &ParamStore, ids: &[ParamId]) -> Vec<bool> {
    let mut mask = vec![false; store.len()];
    for id in ids {
        mask[id.0] = true;
    }
    mask
}

fn check_finite(loss: f64, stage: u8, step: usize) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "stage-{stage} training diverged at step {step} (loss = {loss})"
        )));
    }
    Ok(loss)
}

/// Optimizes the channel codec and its NAMs by feature-reconstruction MSE
/// through the simulated channel; everything else stays untouched.
pub fn train_channel_stage(
    store: &mut ParamStore,
    codecs: &Codecs,
    features: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::Degenerate("stage 1 needs a non-empty feature set".into()));
    }
    let k = codecs.channel.symbol_dim();
    let ids = codecs.channel_trainable_ids(store);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), store);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let snr = cfg.snr.sample(rng);
        let mut tape = Tape::new();
        let mask = trainable_mask(store, &ids);
        let bind = store.bind(&mut tape, |id| mask[id.0]);

        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let f = &features[rng.gen_range(0..features.len())];
            let real = draw_usable_realization(snr, cfg.kind, rng)?;
            let noise = Tensor::new(
                vec![f.rows(), k],
                draw_noise(f.rows() * k, real.noise_var, rng),
            )?;
            let fc = tape.constant(f);
            let y = codecs.channel.encode(&mut tape, &bind, fc, snr)?;
            let rx = channel_on_tape(&mut tape, y, &real, &noise)?;
            let g = codecs.channel.decode(&mut tape, &bind, rx, snr)?;
            let diff = tape.sub(g, fc)?;
            let sq = tape.mul(diff, diff)?;
            losses.push(tape.mean_all(sq));
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let loss_node = tape.scale(total, 1.0 / cfg.batch as f64);
        let loss = check_finite(tape.scalar_value(loss_node), 1, step)?;
        tape.backward(loss_node)?;
        let grads: Vec<(ParamId, &[f64])> =
            ids.iter().map(|&id| (id, tape.grad(bind.node(id)))).collect();
        adam.step(store, &grads)?;
        curve.push(CurvePoint { step, stage: 1, loss, snr_db: snr.db() });
    }
    Ok(curve)
}

/// Optimizes the semantic codec and its NAMs with masked cross-entropy
/// through the frozen channel codec.
pub fn train_semantic_stage(
    store: &mut ParamStore,
    codecs: &Codecs,
    data: &[TokenSequence],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Degenerate("stage 2 needs a non-empty sentence set".into()));
    }
    let k = codecs.channel.symbol_dim();
    let ids = codecs.semantic_trainable_ids(store);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), store);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let snr = cfg.snr.sample(rng);
        let mut tape = Tape::new();
        let mask = trainable_mask(store, &ids);
        let bind = store.bind(&mut tape, |id| mask[id.0]);

        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let seq = &data[rng.gen_range(0..data.len())];
            let real = draw_usable_realization(snr, cfg.kind, rng)?;
            let noise = Tensor::new(
                vec![seq.len(), k],
                draw_noise(seq.len() * k, real.noise_var, rng),
            )?;
            losses.push(sentence_loss(&mut tape, &bind, codecs, seq, snr, &real, &noise)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let loss_node = tape.scale(total, 1.0 / cfg.batch as f64);
        let loss = check_finite(tape.scalar_value(loss_node), 2, step)?;
        tape.backward(loss_node)?;
        let grads: Vec<(ParamId, &[f64])> =
            ids.iter().map(|&id| (id, tape.grad(bind.node(id)))).collect();
        adam.step(store, &grads)?;
        curve.push(CurvePoint { step, stage: 2, loss, snr_db: snr.db() });
    }
    Ok(curve)
}

fn sentence_loss(
    tape: &mut Tape,
    bind: &crate::numerics::TapeBinding,
    codecs: &Codecs,
    seq: &TokenSequence,
    snr: SnrDb,
    real: &ChannelRealization,
    noise: &Tensor,
) -> Result<NodeId> {
    let token_ids = seq.ids();
    let f = codecs.semantic.encode(tape, bind, token_ids, snr)?;
    let y = codecs.channel.encode(tape, bind, f, snr)?;
    let rx = channel_on_tape(tape, y, real, noise)?;
    let g = codecs.channel.decode(tape, bind, rx, snr)?;
    let pad: Vec<bool> = token_ids.iter().map(|&i| i == super::vocab::PAD_ID).collect();
    let logits = codecs.semantic.decode(tape, bind, g, &pad, snr)?;
    let targets: Vec<usize> = token_ids.iter().map(|&i| i as usize).collect();
    let mask: Vec<bool> = pad.iter().map(|&p| !p).collect();
    tape.ce_loss(logits, &targets, &mask)
}

/// Mean cross-entropy of a sentence set through the full pipeline at a
/// fixed SNR, with channel draws taken from a dedicated seed so repeated
/// evaluations (and different rounds) see identical noise.
pub fn validation_ce(
    store: &ParamStore,
    codecs: &Codecs,
    val: &[TokenSequence],
    snr: SnrDb,
    kind: ChannelKind,
    val_seed: u64,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Degenerate("validation over an empty sentence set".into()));
    }
    let k = codecs.channel.symbol_dim();
    let mut rng = RunRng::new(val_seed).stream(Stream::Eval);
    let mut sum = 0.0;
    for seq in val {
        let real = draw_usable_realization(snr, kind, &mut rng)?;
        let noise = Tensor::new(
            vec![seq.len(), k],
            draw_noise(seq.len() * k, real.noise_var, &mut rng),
        )?;
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, |_| false);
        let loss = sentence_loss(&mut tape, &bind, codecs, seq, snr, &real, &noise)?;
        sum += check_finite(tape.scalar_value(loss), 2, 0)?;
    }
    Ok(sum / val.len() as f64)
}

/// Crossover-training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverConfig {
    /// Channel-stage hyper-parameters per round.
    pub stage1: TrainConfig,
    /// Semantic-stage hyper-parameters per round.
    pub stage2: TrainConfig,
    /// Round cap.
    pub max_rounds: usize,
    /// Relative validation-CE improvement below which training stops.
    pub tol: f64,
    /// Fixed SNR for validation passes.
    pub val_snr: SnrDb,
    /// Seed for the validation channel draws (identical every round).
    pub val_seed: u64,
}

impl CrossoverConfig {
    /// Checks field ranges.
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.max_rounds == 0 {
            return Err(Error::Contract("crossover needs at least one round".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Contract(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One crossover round's validation outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Round index, from 0.
    pub round: usize,
    /// Validation CE after this round.
    pub val_ce: f64,
    /// Best validation CE up to and including this round.
    pub best_val_ce: f64,
}

/// Outcome of a crossover training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverReport {
    /// Concatenated training curve with global step numbering.
    pub curve: Vec<CurvePoint>,
    /// Per-round validation records.
    pub rounds: Vec<RoundRecord>,
    /// False when the round cap was hit before the tolerance.
    pub converged: bool,
    /// Best validation CE seen; the store holds these parameters on return.
    pub best_val_ce: f64,
}

/// Alternates stage 1 and stage 2 until validation CE stops improving,
/// then restores the best-validation parameters into the store.
pub fn crossover_train(
    store: &mut ParamStore,
    codecs: &Codecs,
    train: &[TokenSequence],
    val: &[TokenSequence],
    cfg: &CrossoverConfig,
    rng: &mut impl Rng,
) -> Result<CrossoverReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("crossover training needs sentences".into()));
    }
    let all_ids: Vec<ParamId> = store.ids().collect();
    let mut curve = Vec::new();
    let mut rounds = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut prev_ce: Option<f64> = None;
    let mut converged = false;

    for round in 0..cfg.max_rounds {
        // Stage 1 consumes features extracted by the current (frozen)
        // semantic encoder at SNRs from the training distribution.
        let features: Vec<Tensor> = train
            .iter()
            .map(|seq| {
                let snr = cfg.stage1.snr.sample(rng);
                codecs.semantic.encode_eager(store, seq.ids(), snr)
            })
            .collect::<Result<_>>()?;
        let offset = curve.len();
        for mut p in train_channel_stage(store, codecs, &features, &cfg.stage1, rng)? {
            p.step += offset;
            curve.push(p);
        }
        let offset = curve.len();
        for mut p in train_semantic_stage(store, codecs, train, &cfg.stage2, rng)? {
            p.step += offset;
            curve.push(p);
        }

        let val_ce =
            validation_ce(store, codecs, val, cfg.val_snr, cfg.stage2.kind, cfg.val_seed)?;
        if best.as_ref().map_or(true, |(b, _)| val_ce < *b) {
            let snapshot = all_ids.iter().map(|&id| store.get(id).clone()).collect();
            best = Some((val_ce, snapshot));
        }
        let best_ce = best.as_ref().expect("just set").0;
        rounds.push(RoundRecord { round, val_ce, best_val_ce: best_ce });

        if let Some(prev) = prev_ce {
            let rel = (prev - val_ce) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.tol {
                converged = true;
                break;
            }
        }
        prev_ce = Some(val_ce);
    }

    let (best_val_ce, snapshot) = best.expect("at least one round ran");
    for (&id, tensor) in all_ids.iter().zip(snapshot) {
        store.set(id, tensor)?;
    }
    Ok(CrossoverReport { curve, rounds, converged, best_val_ce })
}
