//! Experiment configuration: TOML file format, presets, validation,
//! environment overrides, and a reproducible content hash.
//!
//! A config file is plain TOML with one section per concern (architecture,
//! channel, snr, med, datasets, training, sweep, seeds, output, backend).
//! Every key is documented in the generated [`config_reference`]; unknown
//! keys are rejected rather than ignored. All randomness is governed by the
//! explicit seeds in `[seeds]` — nothing reads entropy from the system.
//!
//! Exactly two environment variables may override the file (applied by
//! [`ExperimentConfig::apply_env`]): `SEMCOM_OUTPUT_DIR` and
//! `SEMCOM_REMOTE_URL`. The content hash is computed *after* overrides, so
//! a run manifest always reflects the configuration that actually ran.

use std::path::{Path, PathBuf};

use semcom_core::channel::{ChannelKind, SnrDb, SnrDist};
use semcom_core::codecs::{ArchitectureConfig, CrossoverConfig, TrainConfig};
use semcom_core::med::{MedConfig, TransferDirection};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Environment variable overriding `[output] dir`.
pub const ENV_OUTPUT_DIR: &str = "SEMCOM_OUTPUT_DIR";

/// Environment variable overriding `[backend] remote_url`.
pub const ENV_REMOTE_URL: &str = "SEMCOM_REMOTE_URL";

/// `[architecture]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    /// Model size preset: `"toy"` or `"paper"`.
    pub preset: String,
}

/// `[channel]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Fading model: `"awgn"` or `"rayleigh"`.
    pub kind: ChannelKind,
}

/// `[snr]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSection {
    /// Training-time SNR distribution.
    pub train: SnrDist,
    /// Evaluation SNR grid for sweeps, in dB.
    pub test_db: Vec<f64>,
    /// Fixed SNR for validation passes during training, in dB.
    pub val_db: f64,
}

/// `[med]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedSection {
    /// Short-term buffer capacity; consolidation fires when it fills.
    pub n_stm_max: usize,
    /// Similarity threshold for long-term transfer.
    pub lambda: f64,
    /// RBF kernel width.
    pub tau: f64,
    /// Long-term share of each replay batch, in `[0, 1]`.
    pub mix_ratio: f64,
    /// Transfer rule: `"similar"` (default) or `"diverse"`.
    pub direction: TransferDirection,
    /// Replay samples mixed into each continual training stage.
    pub replay_batch: usize,
    /// Optional long-term memory cap; omit for unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ltm_cap: Option<usize>,
}

/// `[datasets]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetsSection {
    /// Datasets in training order: built-in fixture names or directories
    /// containing `manifest.csv`.
    pub sequence: Vec<String>,
    /// Every `eval_every`-th record (by position) joins the held-out eval
    /// split; the rest train. Must be at least 2.
    pub eval_every: usize,
}

/// `[training]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Crossover round cap.
    pub rounds: usize,
    /// Relative validation improvement below which training stops.
    pub tol: f64,
    /// Channel-stage optimizer steps per round.
    pub stage1_steps: usize,
    /// Channel-stage batch size.
    pub stage1_batch: usize,
    /// Channel-stage learning rate.
    pub stage1_lr: f64,
    /// Semantic-stage optimizer steps per round.
    pub stage2_steps: usize,
    /// Semantic-stage batch size.
    pub stage2_batch: usize,
    /// Semantic-stage learning rate.
    pub stage2_lr: f64,
}

/// `[sweep]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Variants to evaluate: `"nam-uniform"` (trained on `[snr] train`)
    /// and/or `"fixed-<dB>"` baselines trained at one SNR.
    pub variants: Vec<String>,
    /// Evaluation channel seeds; mean and stddev aggregate over these.
    pub seeds: Vec<u64>,
    /// BLEU variant for sweep cells: 1 (unigram) or 2 (bigram mix).
    pub bleu_order: u32,
}

/// `[seeds]` section. All explicit; nothing falls back to system entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    /// Parameter init and training-time draws.
    pub master: u64,
    /// Caption selection and dataset splits (fixed across sweep seeds).
    pub data: u64,
    /// Validation and evaluation channel draws.
    pub eval: u64,
}

/// `[output]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory all artifacts land in; created on demand.
    pub dir: PathBuf,
}

/// `[backend]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// Knowledge-base backend: `"mock"` or `"remote"`.
    pub kind: String,
    /// Service root for the remote backend; required when kind is remote.
    #[serde(default)]
    pub remote_url: String,
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model size preset.
    pub architecture: ArchitectureSection,
    /// Fading model.
    pub channel: ChannelSection,
    /// SNR settings.
    pub snr: SnrSection,
    /// Replay memory settings.
    pub med: MedSection,
    /// Dataset sequence and split rule.
    pub datasets: DatasetsSection,
    /// Crossover training schedule.
    pub training: TrainingSection,
    /// Sweep variants and seeds.
    pub sweep: SweepSection,
    /// All random seeds.
    pub seeds: SeedsSection,
    /// Output directory.
    pub output: OutputSection,
    /// Knowledge-base backend selection.
    pub backend: BackendSection,
}

/// What a sweep variant trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariantKind {
    /// The `[snr] train` distribution.
    Uniform,
    /// A single fixed SNR in dB.
    Fixed(f64),
}

/// Parse a variant name: `"nam-uniform"` or `"fixed-<dB>"`.
pub fn parse_variant(name: &str) -> Result<VariantKind> {
    if name == "nam-uniform" {
        return Ok(VariantKind::Uniform);
    }
    if let Some(db) = name.strip_prefix("fixed-") {
        if let Ok(v) = db.parse::<f64>() {
            if v.is_finite() {
                return Ok(VariantKind::Fixed(v));
            }
        }
    }
    Err(HarnessError::Config(format!(
        "unknown sweep variant {name:?}; expected \"nam-uniform\" or \"fixed-<dB>\""
    )))
}

impl ExperimentConfig {
    /// Small preset: toy architecture, short schedules, reduced memory cap
    /// so consolidation actually fires on the 150-record fixtures.
    pub fn toy() -> Self {
        Self {
            architecture: ArchitectureSection { preset: "toy".into() },
            channel: ChannelSection { kind: ChannelKind::Awgn },
            snr: SnrSection {
                train: SnrDist::Uniform { lo: 0.0, hi: 10.0 },
                test_db: vec![0.0, 5.0, 10.0],
                val_db: 10.0,
            },
            med: MedSection {
                n_stm_max: 60,
                lambda: 0.05,
                tau: 10.0,
                mix_ratio: 0.5,
                direction: TransferDirection::Similar,
                replay_batch: 24,
                ltm_cap: None,
            },
            datasets: DatasetsSection {
                sequence: vec!["toy-cifar".into(), "toy-birds".into(), "toy-pets".into()],
                eval_every: 5,
            },
            training: TrainingSection {
                rounds: 2,
                tol: 1e-3,
                stage1_steps: 80,
                stage1_batch: 8,
                stage1_lr: 3e-3,
                stage2_steps: 150,
                stage2_batch: 4,
                stage2_lr: 5e-3,
            },
            sweep: SweepSection {
                variants: vec!["nam-uniform".into(), "fixed-10".into()],
                seeds: vec![101, 102, 103, 104, 105],
                bleu_order: 1,
            },
            seeds: SeedsSection { master: 7, data: 11, eval: 13 },
            output: OutputSection { dir: PathBuf::from("runs/toy") },
            backend: BackendSection { kind: "mock".into(), remote_url: String::new() },
        }
    }

    /// Full-scale preset mirroring the published settings: larger codec,
    /// 500-sample short-term memory, Rayleigh fading, fixed baselines at
    /// 1/4/7/10 dB. Expect long runtimes.
    pub fn paper() -> Self {
        let mut cfg = Self::toy();
        cfg.architecture.preset = "paper".into();
        cfg.channel.kind = ChannelKind::Rayleigh;
        cfg.snr.test_db = (0..=10).map(f64::from).collect();
        cfg.med.n_stm_max = 500;
        cfg.med.replay_batch = 64;
        cfg.training.rounds = 20;
        cfg.training.stage1_steps = 2000;
        cfg.training.stage2_steps = 4000;
        cfg.sweep.variants = vec![
            "nam-uniform".into(),
            "fixed-1".into(),
            "fixed-4".into(),
            "fixed-7".into(),
            "fixed-10".into(),
        ];
        cfg.output.dir = PathBuf::from("runs/paper");
        cfg
    }

    /// Parse and validate a TOML string.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| HarnessError::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse, and validate a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Serialize back to TOML (the canonical form hashed by
    /// [`config_hash`](Self::config_hash)).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Apply the two supported environment overrides through an injectable
    /// lookup (pass `|k| std::env::var(k).ok()` in production).
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(dir) = get(ENV_OUTPUT_DIR) {
            self.output.dir = PathBuf::from(dir);
        }
        if let Some(url) = get(ENV_REMOTE_URL) {
            self.backend.remote_url = url;
        }
    }

    /// The resolved architecture.
    pub fn arch(&self) -> Result<ArchitectureConfig> {
        match self.architecture.preset.as_str() {
            "toy" => Ok(ArchitectureConfig::toy()),
            "paper" => Ok(ArchitectureConfig::paper()),
            other => Err(HarnessError::Config(format!(
                "unknown architecture preset {other:?}; known presets: toy, paper"
            ))),
        }
    }

    /// The resolved replay-memory configuration.
    pub fn med_config(&self) -> MedConfig {
        MedConfig {
            n_stm_max: self.med.n_stm_max,
            lambda: self.med.lambda,
            tau: self.med.tau,
            direction: self.med.direction,
            ltm_cap: self.med.ltm_cap,
        }
    }

    /// The crossover schedule for one sweep variant (both stages train at
    /// the variant's SNR distribution).
    pub fn crossover(&self, variant: VariantKind) -> CrossoverConfig {
        let dist = match variant {
            VariantKind::Uniform => self.snr.train.clone(),
            VariantKind::Fixed(db) => SnrDist::Fixed { value: db },
        };
        CrossoverConfig {
            stage1: TrainConfig {
                steps: self.training.stage1_steps,
                batch: self.training.stage1_batch,
                lr: self.training.stage1_lr,
                snr: dist.clone(),
                kind: self.channel.kind,
            },
            stage2: TrainConfig {
                steps: self.training.stage2_steps,
                batch: self.training.stage2_batch,
                lr: self.training.stage2_lr,
                snr: dist,
                kind: self.channel.kind,
            },
            max_rounds: self.training.rounds,
            tol: self.training.tol,
            val_snr: SnrDb(self.snr.val_db),
            val_seed: self.seeds.eval,
        }
    }

    /// Check the whole config; returns the first problem found.
    pub fn validate(&self) -> Result<()> {
        let contract = |msg: String| Err(HarnessError::Config(msg));
        self.arch()?.validate()?;
        self.snr.train.validate()?;
        if self.snr.test_db.is_empty() {
            return contract("snr.test_db must list at least one point".into());
        }
        if !self.snr.test_db.iter().all(|v| v.is_finite()) || !self.snr.val_db.is_finite() {
            return contract("snr values must be finite".into());
        }
        self.med_config().validate()?;
        if !(0.0..=1.0).contains(&self.med.mix_ratio) {
            return contract(format!(
                "med.mix_ratio must lie in [0,1], got {}",
                self.med.mix_ratio
            ));
        }
        if self.med.replay_batch == 0 {
            return contract("med.replay_batch must be at least 1".into());
        }
        if self.datasets.sequence.is_empty() {
            return contract("datasets.sequence must name at least one dataset".into());
        }
        if self.datasets.eval_every < 2 {
            return contract("datasets.eval_every must be at least 2".into());
        }
        self.crossover(VariantKind::Uniform).validate()?;
        if self.sweep.variants.is_empty() {
            return contract("sweep.variants must list at least one variant".into());
        }
        for v in &self.sweep.variants {
            parse_variant(v)?;
        }
        if self.sweep.seeds.is_empty() {
            return contract("sweep.seeds must list at least one seed".into());
        }
        if !(1..=2).contains(&self.sweep.bleu_order) {
            return contract(format!(
                "sweep.bleu_order must be 1 or 2, got {}",
                self.sweep.bleu_order
            ));
        }
        match self.backend.kind.as_str() {
            "mock" => {}
            "remote" => {
                if self.backend.remote_url.trim().is_empty() {
                    return contract(
                        "backend.kind = \"remote\" requires backend.remote_url".into(),
                    );
                }
            }
            other => {
                return contract(format!(
                    "unknown backend kind {other:?}; known kinds: mock, remote"
                ))
            }
        }
        if self.output.dir.as_os_str().is_empty() {
            return contract("output.dir must not be empty".into());
        }
        Ok(())
    }
}

/// Documentation for every configuration key.
const KEY_DOCS: &[(&str, &str)] = &[
    ("architecture.preset", "model size preset: \"toy\" or \"paper\""),
    ("channel.kind", "fading model: \"awgn\" or \"rayleigh\""),
    ("snr.train", "training SNR distribution (inline table)"),
    ("snr.train.dist", "distribution kind: \"fixed\" or \"uniform\""),
    ("snr.train.value", "fixed distribution: the constant SNR in dB"),
    ("snr.train.lo", "uniform distribution: lower edge in dB"),
    ("snr.train.hi", "uniform distribution: upper edge in dB"),
    ("snr.test_db", "evaluation SNR grid for sweeps, in dB"),
    ("snr.val_db", "fixed validation SNR during training, in dB"),
    ("med.n_stm_max", "short-term buffer capacity; consolidation fires when full"),
    ("med.lambda", "similarity threshold for long-term transfer"),
    ("med.tau", "RBF kernel width"),
    ("med.mix_ratio", "long-term share of each replay batch, in [0,1]"),
    ("med.direction", "transfer rule: \"similar\" or \"diverse\""),
    ("med.replay_batch", "replay samples mixed into each continual stage"),
    ("med.ltm_cap", "optional long-term memory cap; omit for unbounded"),
    ("datasets.sequence", "datasets in training order: fixture names or directories"),
    ("datasets.eval_every", "every n-th record joins the eval split (n >= 2)"),
    ("training.rounds", "crossover round cap"),
    ("training.tol", "relative validation improvement that stops training"),
    ("training.stage1_steps", "channel-stage steps per round"),
    ("training.stage1_batch", "channel-stage batch size"),
    ("training.stage1_lr", "channel-stage learning rate"),
    ("training.stage2_steps", "semantic-stage steps per round"),
    ("training.stage2_batch", "semantic-stage batch size"),
    ("training.stage2_lr", "semantic-stage learning rate"),
    ("sweep.variants", "variants to evaluate: \"nam-uniform\", \"fixed-<dB>\""),
    ("sweep.seeds", "evaluation channel seeds aggregated into mean/stddev"),
    ("sweep.bleu_order", "BLEU variant for sweep cells: 1 or 2"),
    ("seeds.master", "parameter init and training draws"),
    ("seeds.data", "caption selection and dataset splits"),
    ("seeds.eval", "validation and evaluation channel draws"),
    ("output.dir", "output directory (override: SEMCOM_OUTPUT_DIR)"),
    ("backend.kind", "knowledge-base backend: \"mock\" or \"remote\""),
    ("backend.remote_url", "remote service root (override: SEMCOM_REMOTE_URL)"),
];

/// Generated reference of every configuration key with its documentation
/// and its value in the toy preset.
pub fn config_reference() -> String {
    let mut out = String::from(
        "Configuration reference (TOML). Environment overrides: \
         SEMCOM_OUTPUT_DIR, SEMCOM_REMOTE_URL.\n\n",
    );
    for (key, doc) in KEY_DOCS {
        out.push_str(&format!("{key}\n    {doc}\n"));
    }
    out.push_str("\nToy preset:\n\n");
    out.push_str(&ExperimentConfig::toy().to_toml());
    out
}

/// Every dotted leaf-key path present in a TOML value.
#[cfg(test)]
fn leaf_keys(value: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(v, &path, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for cfg in [ExperimentConfig::toy(), ExperimentConfig::paper()] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn hash_is_stable_and_tracks_content() {
        let a = ExperimentConfig::toy();
        let mut b = ExperimentConfig::toy();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        b.seeds.master = 8;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut text = ExperimentConfig::toy().to_toml();
        text.push_str("\n[surprise]\nkey = 1\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(HarnessError::Config(_))
        ));

        let mut cfg = ExperimentConfig::toy();
        cfg.datasets.eval_every = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::toy();
        cfg.backend.kind = "remote".into();
        assert!(cfg.validate().is_err(), "remote backend needs a url");
        cfg.backend.remote_url = "http://h:1".into();
        cfg.validate().unwrap();

        let mut cfg = ExperimentConfig::toy();
        cfg.sweep.variants = vec!["fixed-oops".into()];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::toy();
        cfg.architecture.preset = "giant".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides_touch_only_the_two_documented_keys() {
        let mut cfg = ExperimentConfig::toy();
        let before = cfg.clone();
        cfg.apply_env(|k| match k {
            ENV_OUTPUT_DIR => Some("/tmp/elsewhere".to_string()),
            ENV_REMOTE_URL => Some("http://other:9".to_string()),
            _ => None,
        });
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/elsewhere"));
        assert_eq!(cfg.backend.remote_url, "http://other:9");
        // Nothing else moved.
        let mut reverted = cfg.clone();
        reverted.output.dir = before.output.dir.clone();
        reverted.backend.remote_url = before.backend.remote_url.clone();
        assert_eq!(reverted, before);
        // Hash reflects the overridden config.
        assert_ne!(cfg.config_hash(), before.config_hash());
    }

    #[test]
    fn variant_names_parse_or_fail_loudly() {
        assert_eq!(parse_variant("nam-uniform").unwrap(), VariantKind::Uniform);
        assert_eq!(parse_variant("fixed-10").unwrap(), VariantKind::Fixed(10.0));
        assert_eq!(parse_variant("fixed-2.5").unwrap(), VariantKind::Fixed(2.5));
        assert!(parse_variant("fixed-").is_err());
        assert!(parse_variant("nam").is_err());
        assert!(parse_variant("fixed-inf").is_err());
    }

    #[test]
    fn every_config_key_is_documented_in_the_reference() {
        let reference = config_reference();
        // Collect leaf keys from both presets so optional keys (ltm_cap)
        // and both SNR distribution shapes are exercised.
        let mut cfg_fixed = ExperimentConfig::toy();
        cfg_fixed.snr.train = SnrDist::Fixed { value: 5.0 };
        cfg_fixed.med.ltm_cap = Some(100);
        let mut keys = Vec::new();
        for cfg in [ExperimentConfig::toy(), ExperimentConfig::paper(), cfg_fixed] {
            let value: toml::Value = toml::from_str(&cfg.to_toml()).unwrap();
            leaf_keys(&value, "", &mut keys);
        }
        keys.sort();
        keys.dedup();
        for key in keys {
            assert!(
                reference.contains(&key),
                "config key {key:?} missing from the reference"
            );
        }
    }
}
