//! Run manifests: every command that writes artifacts also writes a
//! `manifest.json` describing exactly what it produced, and the manifest
//! can be verified bidirectionally against the directory — every listed
//! file must exist, and every file on disk must be listed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// File name of the manifest inside a run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// File name of the plotting helper stub.
pub const PLOT_FILE: &str = "plot.py";

/// File name of the sweep CSV.
pub const BLEU_CSV_FILE: &str = "bleu_snr.csv";

/// File name of the continual-learning CSV.
pub const CONTINUAL_CSV_FILE: &str = "continual.csv";

/// File name of the persisted replay-pool snapshot.
pub const SNAPSHOT_FILE: &str = "memory-snapshot.json";

/// File name of a pipeline trace.
pub const TRACE_FILE: &str = "trace.json";

/// What one command run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// The subcommand that ran.
    pub command: String,
    /// Hash of the effective configuration (after env overrides).
    pub config_hash: String,
    /// The master seed of the run.
    pub seed: u64,
    /// Wall-clock duration of the run in seconds.
    pub wall_clock_secs: f64,
    /// Every file in the run directory, relative, `/`-separated, sorted.
    pub outputs: Vec<String>,
    /// Subset of `outputs` that are model checkpoints.
    pub checkpoints: Vec<String>,
    /// Named summary numbers (losses, scores, counters).
    pub metrics: BTreeMap<String, f64>,
    /// Counted off-happy-path events, as `name x<count>` lines.
    pub deviations: Vec<String>,
    /// Requested work that was skipped, with the reason.
    pub skipped: Vec<String>,
}

impl RunManifest {
    /// Empty manifest for a command about to run.
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            wall_clock_secs: 0.0,
            outputs: Vec::new(),
            checkpoints: Vec::new(),
            metrics: BTreeMap::new(),
            deviations: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Record a produced file (relative to the run directory).
    pub fn record_output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Record a summary number.
    pub fn record_metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Write the manifest into `dir`, listing itself as an output. Output
    /// lists are sorted and deduplicated on the way out.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.record_output(MANIFEST_FILE);
        self.outputs.sort();
        self.outputs.dedup();
        self.checkpoints.sort();
        self.checkpoints.dedup();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| HarnessError::Run(format!("cannot serialize manifest: {e}")))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    /// Read the manifest from `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Run(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Run(format!("corrupt {}: {e}", path.display())))
    }
}

/// Every file under `dir`, recursive, as sorted relative `/` paths.
fn walk_files(dir: &Path) -> Result<Vec<String>> {
    fn rec(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                rec(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path lies under its root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push(rel);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    rec(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Check the manifest in `dir` against the directory contents in both
/// directions: no listed file may be missing, no file may be unlisted.
pub fn verify_outputs(dir: &Path) -> Result<()> {
    let manifest = RunManifest::read(dir)?;
    let on_disk = walk_files(dir)?;
    let listed = &manifest.outputs;

    let missing: Vec<&String> = listed.iter().filter(|f| !on_disk.contains(f)).collect();
    let orphans: Vec<&String> = on_disk.iter().filter(|f| !listed.contains(f)).collect();
    if !missing.is_empty() || !orphans.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("listed but missing: {missing:?}"));
        }
        if !orphans.is_empty() {
            parts.push(format!("on disk but unlisted: {orphans:?}"));
        }
        return Err(HarnessError::Run(format!(
            "manifest in {} does not match directory ({})",
            dir.display(),
            parts.join("; ")
        )));
    }
    for ckpt in &manifest.checkpoints {
        if !listed.contains(ckpt) {
            return Err(HarnessError::Run(format!(
                "checkpoint {ckpt:?} is not among the manifest outputs"
            )));
        }
    }
    Ok(())
}

/// Source of the plotting helper written next to result CSVs. Plain
/// stdlib Python; renders text summaries, and PNGs when matplotlib is
/// importable.
const PLOT_STUB: &str = r#"#!/usr/bin/env python3
"""Render the result CSVs in this directory.

Reads bleu_snr.csv (snr_db,variant,mean,stddev,n) and/or continual.csv
(stage,dataset,variant,value) and prints aligned text tables. If
matplotlib is installed, also writes a PNG next to each CSV.
"""
import csv
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return None
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def table(rows, cols):
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in cols]
    line = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(r[c]).ljust(w) for c, w in zip(cols, widths)))


def maybe_plot(rows, kind):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots()
    if kind == "sweep":
        variants = sorted({r["variant"] for r in rows})
        for v in variants:
            pts = [(float(r["snr_db"]), float(r["mean"])) for r in rows if r["variant"] == v]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=v)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("BLEU")
        out = "bleu_snr.png"
    else:
        variants = sorted({r["variant"] for r in rows})
        datasets = sorted({r["dataset"] for r in rows})
        for v in variants:
            for d in datasets:
                pts = [
                    (int(r["stage"]), float(r["value"]))
                    for r in rows
                    if r["variant"] == v and r["dataset"] == d and r["value"] != "NA"
                ]
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{v}/{d}")
        ax.set_xlabel("stage")
        ax.set_ylabel("BLEU")
        out = "continual.png"
    ax.legend()
    fig.savefig(os.path.join(HERE, out), dpi=120)
    print(f"wrote {out}")


def main():
    found = False
    sweep = load("bleu_snr.csv")
    if sweep:
        found = True
        print("== BLEU vs SNR ==")
        table(sweep, ["snr_db", "variant", "mean", "stddev", "n"])
        maybe_plot(sweep, "sweep")
    cont = load("continual.csv")
    if cont:
        found = True
        print("== continual learning ==")
        table(cont, ["stage", "dataset", "variant", "value"])
        maybe_plot(cont, "continual")
    if not found:
        print("no result CSVs found here", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
"#;

/// Write the plotting helper into `dir`; returns its file name for the
/// manifest.
pub fn write_plot_stub(dir: &Path) -> Result<&'static str> {
    std::fs::write(dir.join(PLOT_FILE), PLOT_STUB)?;
    Ok(PLOT_FILE)
}
