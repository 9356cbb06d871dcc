//! Labeled image datasets: built-in synthetic fixtures and an on-disk
//! manifest format.
//!
//! A dataset is a list of [`ImageRecord`]s in deterministic id order plus
//! the set of class labels present. The three built-in fixtures
//! (`toy-cifar`, `toy-birds`, `toy-pets`) each hold three classes of
//! [`FIXTURE_PER_CLASS`] records; their payloads carry per-record caption
//! seeds so the mock backend spreads each class over its phrase table.
//!
//! On-disk datasets are a directory holding `manifest.csv` with the header
//! `id,label,caption_seed`, one record per row. [`write_manifest`]
//! materializes any seed-payload dataset in that format, and
//! [`load_dataset`] reads it back; the pair round-trips exactly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::{fnv1a, mock, ImageRecord, KbError, Provenance, Result};

/// Records per class in every built-in fixture dataset.
pub const FIXTURE_PER_CLASS: usize = 50;

/// Manifest file name expected inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Manifest header row.
pub const MANIFEST_HEADER: &str = "id,label,caption_seed";

/// What to load: a built-in fixture by name, or a directory with a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    /// One of [`mock::FIXTURE_DATASET_NAMES`].
    Fixture(String),
    /// Directory containing [`MANIFEST_FILE`].
    Dir(PathBuf),
}

/// A loaded dataset: records sorted by id, labels sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// Fixture name or directory name.
    pub name: String,
    /// All records, ascending by id.
    pub records: Vec<ImageRecord>,
    /// Sorted set of class labels present.
    pub labels: Vec<String>,
}

impl Dataset {
    /// Assemble a dataset from raw records: sorts by id, derives the label
    /// set, and rejects duplicate ids or an empty record list.
    pub fn from_records(name: &str, mut records: Vec<ImageRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(KbError::Load {
                path: name.to_string(),
                reason: "dataset contains no records".to_string(),
            });
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(KbError::InvalidRecord(format!(
                    "duplicate record id {:?} in dataset {name:?}",
                    pair[0].id
                )));
            }
        }
        let labels: BTreeSet<String> = records.iter().map(|r| r.label.clone()).collect();
        Ok(Self {
            name: name.to_string(),
            records,
            labels: labels.into_iter().collect(),
        })
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// True when the dataset holds no records (never, post-construction).
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Load a dataset from a spec. Fixture specs are generated in memory;
/// directory specs are read from `manifest.csv`.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Fixture(name) => fixture_dataset(name),
        DatasetSpec::Dir(path) => dir_dataset(path),
    }
}

fn fixture_dataset(name: &str) -> Result<Dataset> {
    let labels = mock::fixture_labels(name).ok_or_else(|| KbError::Load {
        path: format!("fixture:{name}"),
        reason: format!(
            "unknown fixture dataset; known fixtures: {}",
            mock::FIXTURE_DATASET_NAMES.join(", ")
        ),
    })?;
    let mut records = Vec::with_capacity(labels.len() * FIXTURE_PER_CLASS);
    for label in labels {
        for i in 0..FIXTURE_PER_CLASS {
            let seed = fnv1a(&[
                name.as_bytes(),
                label.as_bytes(),
                &(i as u64).to_le_bytes(),
            ]);
            records.push(ImageRecord {
                id: format!("{name}/{label}/{i:03}"),
                label: label.to_string(),
                payload: seed.to_le_bytes().to_vec(),
                provenance: Provenance::Fixture,
            });
        }
    }
    Dataset::from_records(name, records)
}

fn dir_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(KbError::Load {
            path: dir.display().to_string(),
            reason: "no such dataset directory".to_string(),
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).map_err(|e| KbError::Load {
        path: manifest.display().to_string(),
        reason: format!("cannot read manifest: {e}"),
    })?;
    let path_str = manifest.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(KbError::Manifest {
                path: path_str,
                line: 1,
                reason: format!("expected header {MANIFEST_HEADER:?}, found {header:?}"),
            })
        }
        None => {
            return Err(KbError::Load {
                path: path_str,
                reason: "manifest is empty".to_string(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(KbError::Manifest {
                path: path_str,
                line: idx + 1,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(KbError::Manifest {
                path: path_str,
                line: idx + 1,
                reason: "empty id or label".to_string(),
            });
        }
        let seed: u64 = fields[2].parse().map_err(|e| KbError::Manifest {
            path: path_str.clone(),
            line: idx + 1,
            reason: format!("bad caption_seed {:?}: {e}", fields[2]),
        })?;
        records.push(ImageRecord {
            id: fields[0].to_string(),
            label: fields[1].to_string(),
            payload: seed.to_le_bytes().to_vec(),
            provenance: Provenance::File,
        });
    }
    if records.is_empty() {
        return Err(KbError::Load {
            path: path_str,
            reason: "manifest contains no records".to_string(),
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::from_records(&name, records)
}

/// Write a dataset as `manifest.csv` under `dir` (created if absent) and
/// return the manifest path. Requires every payload to be an eight-byte
/// caption seed, which holds for fixture and manifest-loaded datasets.
pub fn write_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for rec in &dataset.records {
        for field in [rec.id.as_str(), rec.label.as_str()] {
            if field.contains(',') || field.contains('\n') || field.contains('\r') {
                return Err(KbError::InvalidRecord(format!(
                    "field {field:?} cannot be written to a manifest"
                )));
            }
        }
        let seed_bytes: [u8; 8] = rec.payload.as_slice().try_into().map_err(|_| {
            KbError::InvalidRecord(format!(
                "record {:?} payload is not an eight-byte caption seed",
                rec.id
            ))
        })?;
        out.push_str(&format!(
            "{},{},{}\n",
            rec.id,
            rec.label,
            u64::from_le_bytes(seed_bytes)
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| KbError::Load {
        path: dir.display().to_string(),
        reason: format!("cannot create dataset directory: {e}"),
    })?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, out).map_err(|e| KbError::Load {
        path: path.display().to_string(),
        reason: format!("cannot write manifest: {e}"),
    })?;
    Ok(path)
}
