//! Experiment runners: the BLEU-vs-SNR sweep and the sequential
//! continual-learning protocol with and without replay memory.
//!
//! Both runners are fully seeded and paired: every variant (or arm) sees
//! the same evaluation sentences and the same channel draws at each grid
//! point, so differences measure the systems, not the noise. Deviations
//! from the happy path (dropped frames, shrunken replay batches) are
//! counted in a [`DeviationLog`] that ends up in the run manifest.

use std::collections::BTreeMap;

use rand::Rng;
use semcom_core::channel::SnrDb;
use semcom_core::codecs::TokenSequence;
use semcom_core::med::{MemoryPool, MemorySample, PoolCounters, PoolSnapshot};
use semcom_core::metrics::{bleu, mean_stddev, BleuConfig, BleuRow, EvalMatrix};
use semcom_core::rng::{RunRng, Stream};
use semcom_core::Error as CoreError;
use semcom_kb::mock;
use semcom_kb::ImageRecord;

use crate::config::{ExperimentConfig, VariantKind};
use crate::error::{HarnessError, Result};
use crate::system::{CaptionedRecord, SplitCorpus, TrainedSystem};

/// Bits per channel symbol on the wire (symbols are transmitted as
/// single-precision floats).
pub const WIRE_BITS_PER_SYMBOL: u32 = 32;

/// Byte size of the full-scale fixture image (32 x 32 RGB).
pub const FIXTURE_IMAGE_BYTES: u64 = 32 * 32 * 3;

/// Counted record of documented deviations a run actually exercised.
#[derive(Debug, Default, Clone)]
pub struct DeviationLog(BTreeMap<String, u64>);

impl DeviationLog {
    /// Fresh, empty log.
    pub fn new() -> Self {
        Self::default()
    }

    /// Count one occurrence of a named deviation.
    pub fn note(&mut self, name: &str) {
        *self.0.entry(name.to_string()).or_insert(0) += 1;
    }

    /// True when nothing off the happy path happened.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Render as `name x<count>` lines for the manifest.
    pub fn lines(&self) -> Vec<String> {
        self.0.iter().map(|(k, v)| format!("{k} x{v}")).collect()
    }
}

/// The BLEU scorer a sweep cell uses.
pub fn sweep_bleu_config(order: u32) -> BleuConfig {
    match order {
        1 => BleuConfig::one_gram(),
        _ => BleuConfig::two_gram(),
    }
}

/// Mean sentence BLEU of `sys` over `eval` at one SNR, with channel draws
/// from `rng`. Deep Rayleigh fades drop the frame (scored as nothing, not
/// zero) and are counted in `deviations`.
fn mean_bleu_over(
    sys: &TrainedSystem,
    eval: &[CaptionedRecord],
    snr: SnrDb,
    kind: semcom_core::channel::ChannelKind,
    cfg: &BleuConfig,
    rng: &mut impl Rng,
    deviations: &mut DeviationLog,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for rec in eval {
        let run = match semcom_core::codecs::run_pipeline(
            &sys.store,
            &sys.codecs,
            rec.tokens.ids(),
            snr,
            kind,
            rng,
        ) {
            Ok(run) => run,
            Err(CoreError::SingularChannel { .. }) => {
                deviations.note("rayleigh-deep-fade-frame-dropped");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let outcome = bleu(rec.tokens.ids(), &run.decoded_ids, cfg)?;
        if outcome.degenerate {
            deviations.note("bleu-degenerate-candidate");
        }
        sum += outcome.score;
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::Run(
            "every frame of an evaluation pass was dropped".to_string(),
        ));
    }
    Ok(sum / n as f64)
}

/// BLEU-vs-SNR sweep over trained variants (owned or borrowed).
///
/// For each `[snr] test_db` point and each variant, the full eval set is
/// scored once per `[sweep] seeds` entry; the row aggregates mean and
/// sample stddev over seeds. Channel draws depend only on (seed, SNR
/// index), never on the variant, so the design is paired.
pub fn snr_sweep<S: std::borrow::Borrow<TrainedSystem>>(
    cfg: &ExperimentConfig,
    variants: &[(String, S)],
    eval: &[CaptionedRecord],
    deviations: &mut DeviationLog,
) -> Result<Vec<BleuRow>> {
    if eval.is_empty() {
        return Err(HarnessError::Run("sweep needs a non-empty eval set".to_string()));
    }
    let scorer = sweep_bleu_config(cfg.sweep.bleu_order);
    let mut rows = Vec::with_capacity(cfg.snr.test_db.len() * variants.len());
    for (si, &snr_db) in cfg.snr.test_db.iter().enumerate() {
        for (name, sys) in variants {
            let mut per_seed = Vec::with_capacity(cfg.sweep.seeds.len());
            for &seed in &cfg.sweep.seeds {
                let mut rng = RunRng::new(seed).substream(Stream::Noise, si as u64);
                per_seed.push(mean_bleu_over(
                    sys.borrow(),
                    eval,
                    SnrDb(snr_db),
                    cfg.channel.kind,
                    &scorer,
                    &mut rng,
                    deviations,
                )?);
            }
            let (mean, stddev) = mean_stddev(&per_seed)?;
            rows.push(BleuRow {
                snr_db,
                variant: name.clone(),
                mean,
                stddev,
                n: per_seed.len(),
            });
        }
    }
    Ok(rows)
}

/// Outcome of the two-arm continual-learning experiment.
#[derive(Debug)]
pub struct ContinualOutcome {
    /// Stage-by-dataset BLEU with replay memory.
    pub with_med: EvalMatrix,
    /// Stage-by-dataset BLEU without replay (sequential fine-tuning with
    /// the identical optimizer and schedule).
    pub without_med: EvalMatrix,
    /// Final replay-pool state of the memory arm.
    pub snapshot: PoolSnapshot,
    /// Final replay-pool counters of the memory arm.
    pub counters: PoolCounters,
    /// Deviations both arms exercised.
    pub deviations: DeviationLog,
}

/// Evaluate one system over every dataset's eval split after stage `k`,
/// writing row `k` of the matrix. Channel draws depend only on
/// (`seeds.eval`, stage, dataset), so both arms are paired.
fn fill_stage_row(
    cfg: &ExperimentConfig,
    sys: &TrainedSystem,
    corpora: &[SplitCorpus],
    matrix: &mut EvalMatrix,
    stage: usize,
    scorer: &BleuConfig,
    deviations: &mut DeviationLog,
) -> Result<()> {
    for (j, corpus) in corpora.iter().enumerate() {
        let salt = (stage * corpora.len() + j) as u64;
        let mut rng = RunRng::new(cfg.seeds.eval).substream(Stream::Noise, salt);
        let value = mean_bleu_over(
            sys,
            &corpus.eval,
            SnrDb(cfg.snr.val_db),
            cfg.channel.kind,
            scorer,
            &mut rng,
            deviations,
        )?;
        matrix.set(stage, j, value)?;
    }
    Ok(())
}

fn run_arm(
    cfg: &ExperimentConfig,
    corpora: &[SplitCorpus],
    replay: bool,
    deviations: &mut DeviationLog,
) -> Result<(EvalMatrix, Option<MemoryPool>)> {
    let arch = cfg.arch()?;
    let mut sys = TrainedSystem::init(&arch, cfg.seeds.master)?;
    let names: Vec<&str> = corpora.iter().map(|c| c.dataset.as_str()).collect();
    let mut matrix = EvalMatrix::new(&names)?;
    let scorer = sweep_bleu_config(cfg.sweep.bleu_order);
    let mut pool = replay.then(|| MemoryPool::new(cfg.med_config())).transpose()?;

    for (k, corpus) in corpora.iter().enumerate() {
        let mut train = corpus.train_sequences();
        if let Some(pool) = pool.as_ref() {
            if k > 0 {
                let mut replay_rng = RunRng::new(cfg.seeds.master).substream(Stream::Replay, k as u64);
                let batch =
                    pool.replay_batch(cfg.med.replay_batch, cfg.med.mix_ratio, &mut replay_rng)?;
                if batch.len() < cfg.med.replay_batch {
                    deviations.note("replay-batch-shrunk-to-pool");
                }
                for sample in batch {
                    train.push(TokenSequence::from_ids(sample.tokens, sys.vocab.size())?);
                }
            }
        }
        let val = corpus.eval_sequences();
        let mut train_rng = RunRng::new(cfg.seeds.master).substream(Stream::Data, k as u64);
        sys.train_with_rng(cfg, VariantKind::Uniform, &train, &val, &mut train_rng)?;

        if let Some(pool) = pool.as_mut() {
            let hash = sys.semantic_hash();
            for seq in corpus.train_sequences() {
                let sample = MemorySample {
                    tokens: seq.ids().to_vec(),
                    source: corpus.dataset.clone(),
                    feature: sys.embed_feature(seq.ids()),
                };
                let report = pool.push_stm_refreshing(sample, hash, |ids| sys.embed_feature(ids))?;
                if report.is_some() {
                    deviations.note("memory-consolidation");
                }
            }
        }

        fill_stage_row(cfg, &sys, corpora, &mut matrix, k, &scorer, deviations)?;
    }
    Ok((matrix, pool))
}

/// Train sequentially through the dataset list twice — replay enabled and
/// disabled — evaluating every dataset after each stage.
pub fn continual_experiment(
    cfg: &ExperimentConfig,
    corpora: &[SplitCorpus],
) -> Result<ContinualOutcome> {
    if corpora.len() < 2 {
        return Err(HarnessError::Run(
            "the continual protocol needs at least two datasets".to_string(),
        ));
    }
    let mut deviations = DeviationLog::new();
    let (with_med, pool) = run_arm(cfg, corpora, true, &mut deviations)?;
    let (without_med, _) = run_arm(cfg, corpora, false, &mut deviations)?;
    let pool = pool.expect("memory arm builds a pool");
    Ok(ContinualOutcome {
        with_med,
        without_med,
        snapshot: pool.snapshot(),
        counters: pool.counters(),
        deviations,
    })
}

/// BLEU drop on the first dataset between its own stage and the final
/// stage; the continual criterion compares this across arms.
pub fn first_dataset_drop(matrix: &EvalMatrix) -> Option<f64> {
    let after_own = matrix.get(0, 0)?;
    let after_all = matrix.get(matrix.size() - 1, 0)?;
    Some(after_own - after_all)
}

/// Compression ratio of the full-scale fixture: a 32x32 RGB image against
/// one feature row of channel symbols at wire precision.
pub fn fixture_compression_ratio() -> f64 {
    let symbols = semcom_core::codecs::ArchitectureConfig::paper().symbol_dim() as u64;
    semcom_core::metrics::compression_ratio(FIXTURE_IMAGE_BYTES, symbols, WIRE_BITS_PER_SYMBOL)
        .expect("fixture constants are valid")
}

/// Demo image for pipeline runs when the user picks no dataset record.
pub fn demo_image() -> ImageRecord {
    mock::fire_beach_fixture()
}

/// Find a record by id across corpora (for `pipeline --image <id>`).
pub fn find_record<'a>(corpora: &'a [SplitCorpus], id: &str) -> Option<&'a CaptionedRecord> {
    corpora
        .iter()
        .flat_map(|c| c.train.iter().chain(&c.eval))
        .find(|r| r.image.id == id)
}
