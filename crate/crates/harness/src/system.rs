//! A trainable end-to-end system and the data it learns from.
//!
//! [`TrainedSystem`] bundles the architecture, the closed caption
//! vocabulary, the parameter store, and both codecs; it knows how to train
//! itself with the crossover schedule and how to persist to / restore from
//! a checkpoint directory. [`build_corpora`] turns labeled image datasets
//! into captioned, tokenized, train/eval-split corpora through whichever
//! knowledge-base backend the config selects.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use semcom_core::channel::SnrDb;
use semcom_core::codecs::{
    crossover_train, detokenize, tokenize, ArchitectureConfig, Codecs, CrossoverReport,
    TokenSequence, Vocab,
};
use semcom_core::numerics::checkpoint::{load_into_store, save_store};
use semcom_core::numerics::ParamStore;
use semcom_core::rng::{RunRng, Stream};
use semcom_kb::{
    load_dataset, mock, DatasetSpec, ImageRecord, KnowledgeBase, MockKb, RemoteConfig, RemoteKb,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, VariantKind};
use crate::error::{HarnessError, Result};

/// Checkpoint file holding all parameters.
pub const PARAMS_FILE: &str = "params.ckpt";

/// Sidecar describing the architecture and vocabulary of a checkpoint.
pub const SYSTEM_FILE: &str = "system.json";

/// Reference SNR at which replay-memory features are embedded. Feature
/// vectors are only compared with each other, so any fixed value works;
/// a clean channel keeps them about content, not noise.
pub const FEATURE_SNR_DB: f64 = 10.0;

/// 64-bit FNV-1a over parameter names and bytes; stable within a process,
/// used only to detect encoder drift between feature extractions.
fn fnv1a_bytes(h: &mut u64, bytes: &[u8]) {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    for &b in bytes {
        *h ^= u64::from(b);
        *h = h.wrapping_mul(PRIME);
    }
}

/// The caption vocabulary: closed over every phrase any backend-visible
/// caption can contain (all mock phrases plus the fallback sentence).
pub fn caption_vocab() -> Vocab {
    Vocab::build(mock::all_phrases())
}

/// One image with its caption and token sequence.
#[derive(Debug, Clone)]
pub struct CaptionedRecord {
    /// The source image.
    pub image: ImageRecord,
    /// Caption text produced by the backend.
    pub caption: String,
    /// The caption tokenized against the system vocabulary.
    pub tokens: TokenSequence,
}

/// One dataset split into train and eval records.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    /// Dataset name.
    pub dataset: String,
    /// Training records.
    pub train: Vec<CaptionedRecord>,
    /// Held-out records.
    pub eval: Vec<CaptionedRecord>,
}

impl SplitCorpus {
    /// Distinct training sentences, deterministically ordered. Duplicate
    /// captions (many records share a phrase) would only reweight the
    /// uniform sampler, so training on the distinct set is equivalent and
    /// far cheaper.
    pub fn train_sequences(&self) -> Vec<TokenSequence> {
        dedup_sequences(self.train.iter())
    }

    /// Distinct eval sentences, deterministically ordered.
    pub fn eval_sequences(&self) -> Vec<TokenSequence> {
        dedup_sequences(self.eval.iter())
    }
}

fn dedup_sequences<'a>(records: impl Iterator<Item = &'a CaptionedRecord>) -> Vec<TokenSequence> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<TokenSequence> = records
        .filter(|r| seen.insert(r.tokens.ids().to_vec()))
        .map(|r| r.tokens.clone())
        .collect();
    out.sort_by(|a, b| a.ids().cmp(b.ids()));
    out
}

/// Distinct training sentences pooled over every corpus, deterministically
/// ordered (the single-task sweep trains on the whole sequence at once).
pub fn union_train_sequences(corpora: &[SplitCorpus]) -> Vec<TokenSequence> {
    dedup_sequences(corpora.iter().flat_map(|c| c.train.iter()))
}

/// Distinct held-out sentences pooled over every corpus.
pub fn union_eval_sequences(corpora: &[SplitCorpus]) -> Vec<TokenSequence> {
    dedup_sequences(corpora.iter().flat_map(|c| c.eval.iter()))
}

/// Build the configured knowledge-base backend. The mock backend is seeded
/// from `seeds.data`, so captions are part of the reproducible data draw.
pub fn make_backend(cfg: &ExperimentConfig) -> Result<Box<dyn KnowledgeBase>> {
    match cfg.backend.kind.as_str() {
        "mock" => Ok(Box::new(MockKb::new(cfg.seeds.data))),
        "remote" => {
            let remote = RemoteKb::new(RemoteConfig::new(cfg.backend.remote_url.clone()))?;
            Ok(Box::new(remote))
        }
        other => Err(HarnessError::Config(format!("unknown backend kind {other:?}"))),
    }
}

/// Caption, tokenize, and split every dataset in the configured sequence.
/// Every `eval_every`-th record (by id order) is held out for evaluation.
pub fn build_corpora(
    cfg: &ExperimentConfig,
    vocab: &Vocab,
    kb: &dyn KnowledgeBase,
) -> Result<Vec<SplitCorpus>> {
    let arch = cfg.arch()?;
    let mut corpora = Vec::with_capacity(cfg.datasets.sequence.len());
    for name in &cfg.datasets.sequence {
        let spec = if mock::FIXTURE_DATASET_NAMES.contains(&name.as_str()) {
            DatasetSpec::Fixture(name.clone())
        } else {
            DatasetSpec::Dir(name.into())
        };
        let dataset = load_dataset(&spec)?;
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for (i, image) in dataset.records.into_iter().enumerate() {
            let caption = kb.caption(&image)?;
            let tokens = tokenize(&caption.text, vocab, arch.max_len)?;
            let rec = CaptionedRecord { image, caption: caption.text, tokens };
            if (i + 1) % cfg.datasets.eval_every == 0 {
                eval.push(rec);
            } else {
                train.push(rec);
            }
        }
        corpora.push(SplitCorpus { dataset: dataset.name, train, eval });
    }
    Ok(corpora)
}

/// Sidecar format for [`TrainedSystem::save`].
#[derive(Serialize, Deserialize)]
struct SystemMeta {
    arch: ArchitectureConfig,
    vocab_words: Vec<String>,
}

/// Architecture + vocabulary + parameters, ready to train or run.
pub struct TrainedSystem {
    /// The architecture everything was built with.
    pub arch: ArchitectureConfig,
    /// Closed caption vocabulary.
    pub vocab: Vocab,
    /// All parameters.
    pub store: ParamStore,
    /// Semantic and channel codecs over `store`.
    pub codecs: Codecs,
}

impl TrainedSystem {
    /// Fresh system with parameters drawn from the master seed's init
    /// stream. Identical seeds give bit-identical parameters.
    pub fn init(arch: &ArchitectureConfig, master_seed: u64) -> Result<Self> {
        let vocab = caption_vocab();
        let mut store = ParamStore::new();
        let mut rng = RunRng::new(master_seed).stream(Stream::Init);
        let codecs = Codecs::build(&mut store, vocab.size(), arch, &mut rng)?;
        Ok(Self { arch: arch.clone(), vocab, store, codecs })
    }

    /// Crossover-train on `train`, validating on `val`, at the variant's
    /// SNR distribution. Draws flow from the master seed's data stream.
    pub fn train(
        &mut self,
        cfg: &ExperimentConfig,
        variant: VariantKind,
        train: &[TokenSequence],
        val: &[TokenSequence],
    ) -> Result<CrossoverReport> {
        let schedule = cfg.crossover(variant);
        let mut rng = RunRng::new(cfg.seeds.master).stream(Stream::Data);
        Ok(crossover_train(&mut self.store, &self.codecs, train, val, &schedule, &mut rng)?)
    }

    /// Like [`TrainedSystem::train`] but with an explicit rng, for callers
    /// that schedule several training stages from one seed (continual runs).
    pub fn train_with_rng(
        &mut self,
        cfg: &ExperimentConfig,
        variant: VariantKind,
        train: &[TokenSequence],
        val: &[TokenSequence],
        rng: &mut impl Rng,
    ) -> Result<CrossoverReport> {
        let schedule = cfg.crossover(variant);
        Ok(crossover_train(&mut self.store, &self.codecs, train, val, &schedule, rng)?)
    }

    /// Mean-pooled semantic-encoder feature of one sentence at the fixed
    /// reference SNR; the replay memory compares these vectors.
    pub fn embed_feature(&self, ids: &[u32]) -> Vec<f64> {
        let t = self
            .codecs
            .semantic
            .encode_eager(&self.store, ids, SnrDb(FEATURE_SNR_DB))
            .expect("embedding a validated sentence");
        let rows = t.rows();
        let cols = t.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += t.data()[r * cols + c];
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        mean
    }

    /// Fingerprint of the semantic-encoder parameters, for staleness
    /// detection in the replay memory.
    pub fn semantic_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let ids: Vec<_> = self.store.ids_with_prefix("sem.").collect();
        for id in ids {
            fnv1a_bytes(&mut h, self.store.name(id).as_bytes());
            for v in self.store.get(id).data() {
                fnv1a_bytes(&mut h, &v.to_le_bytes());
            }
        }
        h
    }

    /// Greedy-decode received tokens back to text.
    pub fn token_text(&self, ids: &[u32]) -> String {
        match TokenSequence::from_ids(ids.to_vec(), self.vocab.size()) {
            Ok(seq) => detokenize(&seq, &self.vocab),
            Err(_) => String::new(),
        }
    }

    /// Write `params.ckpt` and `system.json` under `dir` (created if
    /// absent); returns the file names written.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        save_store(&dir.join(PARAMS_FILE), &self.store)?;
        let meta = SystemMeta {
            arch: self.arch.clone(),
            vocab_words: self.vocab.words().map(str::to_string).collect(),
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| HarnessError::Run(format!("cannot serialize system meta: {e}")))?;
        std::fs::write(dir.join(SYSTEM_FILE), json)?;
        Ok(vec![PARAMS_FILE.to_string(), SYSTEM_FILE.to_string()])
    }

    /// Restore a system saved by [`TrainedSystem::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(SYSTEM_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| {
            HarnessError::Run(format!("cannot read {}: {e}", meta_path.display()))
        })?;
        let meta: SystemMeta = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Run(format!("corrupt {}: {e}", meta_path.display())))?;
        meta.arch.validate()?;

        let vocab = Vocab::build(meta.vocab_words.iter().map(String::as_str));
        let rebuilt: Vec<String> = vocab.words().map(str::to_string).collect();
        if rebuilt != meta.vocab_words {
            return Err(HarnessError::Run(format!(
                "vocabulary in {} does not round-trip; checkpoint is corrupt",
                meta_path.display()
            )));
        }

        let mut store = ParamStore::new();
        let mut rng = RunRng::new(0).stream(Stream::Init);
        let codecs = Codecs::build(&mut store, vocab.size(), &meta.arch, &mut rng)?;
        load_into_store(&dir.join(PARAMS_FILE), &mut store)?;
        Ok(Self { arch: meta.arch, vocab, store, codecs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semcom_core::codecs::UNK_ID;

    #[test]
    fn the_vocabulary_covers_every_mock_caption() {
        let vocab = caption_vocab();
        for phrase in mock::all_phrases() {
            let seq = tokenize(phrase, &vocab, 32).unwrap();
            assert!(
                seq.ids().iter().all(|&id| id != UNK_ID),
                "{phrase:?} tokenized with an unknown word"
            );
            assert!(!seq.truncated());
        }
    }

    #[test]
    fn corpora_split_deterministically() {
        let cfg = ExperimentConfig::toy();
        let vocab = caption_vocab();
        let kb = make_backend(&cfg).unwrap();
        let a = build_corpora(&cfg, &vocab, kb.as_ref()).unwrap();
        let b = build_corpora(&cfg, &vocab, kb.as_ref()).unwrap();
        assert_eq!(a.len(), 3);
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.train.len(), 120);
            assert_eq!(ca.eval.len(), 30);
            for (ra, rb) in ca.train.iter().zip(&cb.train) {
                assert_eq!(ra.caption, rb.caption);
                assert_eq!(ra.tokens.ids(), rb.tokens.ids());
            }
        }
        // Train and eval partition the records.
        let ids: BTreeSet<&str> = a[0]
            .train
            .iter()
            .chain(&a[0].eval)
            .map(|r| r.image.id.as_str())
            .collect();
        assert_eq!(ids.len(), 150);
        // Dedup leaves the distinct phrases only (three per class at most).
        assert!(a[0].train_sequences().len() <= 9);
        assert!(!a[0].eval_sequences().is_empty());
    }

    #[test]
    fn init_is_reproducible_and_save_load_round_trips() {
        let arch = ArchitectureConfig::toy();
        let sys1 = TrainedSystem::init(&arch, 42).unwrap();
        let sys2 = TrainedSystem::init(&arch, 42).unwrap();
        let other = TrainedSystem::init(&arch, 43).unwrap();
        let ids: Vec<_> = sys1.store.ids().collect();
        assert!(ids
            .iter()
            .all(|&id| sys1.store.get(id).data() == sys2.store.get(id).data()));
        assert!(ids
            .iter()
            .any(|&id| sys1.store.get(id).data() != other.store.get(id).data()));

        let tmp = tempfile::tempdir().unwrap();
        let files = sys1.save(tmp.path()).unwrap();
        assert_eq!(files.len(), 2);
        let loaded = TrainedSystem::load(tmp.path()).unwrap();
        assert_eq!(loaded.vocab.size(), sys1.vocab.size());
        for &id in &ids {
            assert_eq!(
                loaded.store.get(id).data(),
                sys1.store.get(id).data(),
                "parameter {} drifted through save/load",
                sys1.store.name(id)
            );
        }
        assert_eq!(loaded.semantic_hash(), sys1.semantic_hash());
        assert_ne!(loaded.semantic_hash(), other.semantic_hash());

        assert!(TrainedSystem::load(&tmp.path().join("nope")).is_err());
    }

    #[test]
    fn feature_embeddings_have_model_width_and_track_content() {
        let arch = ArchitectureConfig::toy();
        let sys = TrainedSystem::init(&arch, 1).unwrap();
        let a = sys.embed_feature(&[5, 6, 7]);
        let b = sys.embed_feature(&[5, 6, 7]);
        let c = sys.embed_feature(&[8, 9]);
        assert_eq!(a.len(), arch.feature_dim);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
