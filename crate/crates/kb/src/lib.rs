//! Knowledge-base bridge: the cross-modal boundary of the pipeline.
//!
//! The simulator never does image math. At the transmitter an image becomes a
//! caption (the captioner role of a pretrained vision-language model); at the
//! receiver a caption becomes an image again (the generator role). This crate
//! draws that boundary as the two-method [`KnowledgeBase`] trait and ships two
//! interchangeable backends:
//!
//! * [`MockKb`] — deterministic, offline. Captions come from a finite seeded
//!   phrase table per class label; reconstruction inverts them by keyword
//!   lookup. Enough structure for BLEU and task-success metrics to be
//!   meaningful, and fully reproducible.
//! * [`remote::RemoteKb`] — a small HTTP client for real captioner/generator
//!   services, with bearer-token auth, bounded timeouts, a bounded retry
//!   budget, and an in-flight request cap.
//!
//! [`dataset`] supplies the labeled corpora the experiments run on: three
//! built-in synthetic datasets with deliberately disjoint caption
//! vocabularies (so distribution shift between them is real), plus a loader
//! for on-disk datasets described by a `manifest.csv`.

pub mod dataset;
pub mod mock;
pub mod remote;

pub use dataset::{load_dataset, write_manifest, Dataset, DatasetSpec, FIXTURE_PER_CLASS};
pub use mock::MockKb;
pub use remote::{RemoteConfig, RemoteKb};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, KbError>;

/// Errors raised by the knowledge-base bridge.
#[derive(Debug, Error)]
pub enum KbError {
    /// A dataset could not be located or contained no records.
    #[error("dataset load error at {path}: {reason}")]
    Load {
        /// Resolved path that failed to load.
        path: String,
        /// What went wrong.
        reason: String,
    },

    /// A manifest file exists but a specific line is malformed.
    #[error("manifest error at {path}:{line}: {reason}")]
    Manifest {
        /// Manifest file path.
        path: String,
        /// One-based line number of the offending row.
        line: usize,
        /// What went wrong.
        reason: String,
    },

    /// A record violates a documented invariant (duplicate id, empty
    /// caption text, unserializable payload, ...).
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// Backend configuration is unusable (empty URL, zero in-flight cap).
    #[error("invalid backend config: {0}")]
    Config(String),

    /// The remote service could not be reached within the retry budget.
    #[error("transport failure for {endpoint} after {attempts} attempt(s): {reason}")]
    Transport {
        /// Full URL of the failed request.
        endpoint: String,
        /// Attempts consumed, including the first.
        attempts: u32,
        /// Underlying transport error.
        reason: String,
    },

    /// The remote service answered with a non-success HTTP status.
    #[error("remote status {status} for {endpoint} after {attempts} attempt(s)")]
    RemoteStatus {
        /// Full URL of the failed request.
        endpoint: String,
        /// HTTP status code of the final attempt.
        status: u16,
        /// Attempts consumed, including the first.
        attempts: u32,
    },

    /// The remote service answered 2xx but the body was not the expected
    /// JSON shape (or carried invalid base64).
    #[error("undecodable response from {endpoint}: {reason}")]
    Decode {
        /// Full URL of the request.
        endpoint: String,
        /// What failed to decode.
        reason: String,
    },
}

/// Where an image record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Generated by the built-in fixture tables.
    Fixture,
    /// Loaded from an on-disk dataset directory.
    File,
    /// Produced by a remote service.
    Remote,
}

/// Which backend produced a caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    /// The deterministic offline backend.
    Mock,
    /// A remote HTTP service.
    Remote,
}

/// A labeled image. The payload is opaque to the simulator: for fixture
/// records it carries the per-record caption seed (eight little-endian
/// bytes), for remote records the raw bytes returned by the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Unique id within its dataset.
    pub id: String,
    /// Class tag drawn from the dataset's label set.
    pub label: String,
    /// Opaque bytes (fixture seed or real image data).
    pub payload: Vec<u8>,
    /// Where the record came from.
    pub provenance: Provenance,
}

/// Textual semantic content extracted from one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    /// `id` of the [`ImageRecord`] this caption describes.
    pub image_id: String,
    /// Caption text; backends guarantee it is non-empty.
    pub text: String,
    /// Which backend produced it.
    pub source: CaptionSource,
}

/// The cross-modal boundary: image-to-text at the transmitter and
/// text-to-image at the receiver. The pipeline runs unchanged with any
/// implementation; [`MockKb`] needs no network.
pub trait KnowledgeBase {
    /// Extract the textual semantic content of an image.
    fn caption(&self, img: &ImageRecord) -> Result<CaptionRecord>;

    /// Produce an image matching a caption. The label of the returned
    /// record is recovered from the caption text by keyword lookup and is
    /// `"unknown"` when no known class keyword appears.
    fn reconstruct(&self, caption: &CaptionRecord) -> Result<ImageRecord>;
}

/// 64-bit FNV-1a over a sequence of byte fields, with a separator fold
/// between fields so `["ab","c"]` and `["a","bc"]` hash differently. Used
/// for caption-seed derivation; stable across platforms and releases,
/// unlike the std hasher.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Lowercased alphanumeric words of `text`, in order. This mirrors the text
/// codec's normalization rule so keyword recovery sees the same words the
/// tokenizer does.
pub(crate) fn normalize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}
