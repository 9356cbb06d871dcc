//! End-to-end tests of the `semcom` binary: exit codes, error wording,
//! artifact layout, manifest verification, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semcom_core::metrics::read_continual_csv;
use semcom_harness::config::ExperimentConfig;
use semcom_harness::manifest::{verify_outputs, RunManifest};

fn semcom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semcom"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("the semcom binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A config small enough that train/sweep/continual finish in seconds.
fn tiny_config(out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.training.rounds = 1;
    cfg.training.stage1_steps = 4;
    cfg.training.stage1_batch = 2;
    cfg.training.stage2_steps = 4;
    cfg.training.stage2_batch = 2;
    cfg.sweep.seeds = vec![1, 2];
    cfg.sweep.variants = vec!["nam-uniform".into(), "fixed-3".into()];
    cfg.snr.test_db = vec![0.0, 10.0];
    cfg.med.n_stm_max = 5;
    cfg.med.replay_batch = 4;
    cfg.datasets.sequence = vec!["toy-cifar".into(), "toy-pets".into()];
    cfg.output.dir = out_dir.to_path_buf();
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn missing_config_file_exits_2_and_names_the_path() {
    let out = run(semcom().args(["--config", "/definitely/not/here.toml", "train"]));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.starts_with("semcom: error:"), "got {err:?}");
    assert!(err.contains("/definitely/not/here.toml"), "got {err:?}");
    assert_eq!(err.lines().count(), 1, "errors are single-line: {err:?}");
}

#[test]
fn unknown_flags_and_missing_subcommands_exit_2() {
    let out = run(semcom().arg("--no-such-flag"));
    assert_eq!(out.status.code(), Some(2));

    let out = run(&mut semcom());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("subcommand"));
}

#[test]
fn config_reference_prints_every_section_and_exits_0() {
    let out = run(semcom().arg("--config-reference"));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    for needle in ["[training]", "[med]", "[sweep]", "SEMCOM_OUTPUT_DIR", "SEMCOM_REMOTE_URL"] {
        assert!(text.contains(needle), "reference must mention {needle}");
    }
}

#[test]
fn train_is_byte_reproducible_and_its_manifest_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&tmp.path().join("ignored"));
    let config = write_config(tmp.path(), &cfg);
    let (out_a, out_b) = (tmp.path().join("a"), tmp.path().join("b"));

    for out_dir in [&out_a, &out_b] {
        let out = run(semcom()
            .args(["--config", config.to_str().unwrap(), "train"])
            .env("SEMCOM_OUTPUT_DIR", out_dir));
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        assert!(stdout_of(&out).contains("trained nam-uniform"));
    }

    let ckpt = |root: &Path| root.join("checkpoints").join("nam-uniform");
    let params_a = std::fs::read(ckpt(&out_a).join("params.ckpt")).unwrap();
    let params_b = std::fs::read(ckpt(&out_b).join("params.ckpt")).unwrap();
    assert_eq!(params_a, params_b, "identical config + seed must give identical weights");

    verify_outputs(&ckpt(&out_a)).unwrap();
    let manifest = RunManifest::read(&ckpt(&out_a)).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.checkpoints, vec!["params.ckpt".to_string()]);
    assert!(manifest.metrics.contains_key("best_val_ce"));
    // The manifest hashes the effective config, including env overrides.
    let mut effective = tiny_config(&out_a);
    effective.output.dir = out_a.clone();
    assert_eq!(manifest.config_hash, effective.config_hash());
    assert_ne!(manifest.config_hash, cfg.config_hash(), "the override changed the output dir");
}

#[test]
fn pipeline_traces_an_image_through_a_trained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out_root = tmp.path().join("out");
    let cfg = tiny_config(&out_root);
    let config = write_config(tmp.path(), &cfg);

    let out = run(semcom().args(["--config", config.to_str().unwrap(), "train"]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let ckpt = out_root.join("checkpoints").join("nam-uniform");
    let out = run(semcom().args([
        "--config",
        config.to_str().unwrap(),
        "pipeline",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--snr-db",
        "12",
    ]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("a fire is burning on a beach near the water"), "got {text}");

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_root.join("pipeline/trace.json")).unwrap())
            .unwrap();
    for key in ["caption", "source_tokens", "transmitted", "received", "decoded_tokens"] {
        assert!(trace.get(key).is_some(), "trace must carry intermediate {key}");
    }
    assert_eq!(trace["snr_db"], 12.0);
    assert_eq!(trace["timings"].as_array().unwrap().len(), 10);
    verify_outputs(&out_root.join("pipeline")).unwrap();

    // A checkpoint path that does not exist is a usage error.
    let out = run(semcom().args([
        "--config",
        config.to_str().unwrap(),
        "pipeline",
        "--checkpoint",
        tmp.path().join("nope").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nope"));

    // An image id outside the datasets is a usage error naming the demo id.
    let out = run(semcom().args([
        "--config",
        config.to_str().unwrap(),
        "pipeline",
        "--image",
        "toy-cifar/unicorn/999",
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("demo/fire-beach/000"));
}

#[test]
fn sweep_skips_missing_variants_and_rewrites_byte_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out_root = tmp.path().join("out");
    let cfg = tiny_config(&out_root);
    let config = write_config(tmp.path(), &cfg);

    // No checkpoints at all: the sweep still succeeds with an empty table.
    let out = run(semcom().args(["--config", config.to_str().unwrap(), "sweep-snr"]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(out_root.join("sweep/bleu_snr.csv")).unwrap();
    assert_eq!(csv, "snr_db,variant,mean,stddev,n\n");
    let manifest = RunManifest::read(&out_root.join("sweep")).unwrap();
    assert_eq!(manifest.skipped.len(), 2, "both variants lack checkpoints");

    // Train one of the two variants, then sweep twice.
    let out = run(semcom().args(["--config", config.to_str().unwrap(), "train"]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let mut csvs = Vec::new();
    for _ in 0..2 {
        let out = run(semcom().args(["--config", config.to_str().unwrap(), "sweep-snr"]));
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        assert!(stderr_of(&out).contains("skipped fixed-3"), "got {}", stderr_of(&out));
        csvs.push(std::fs::read(out_root.join("sweep/bleu_snr.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1], "sweep CSVs must be byte-identical across reruns");

    let text = String::from_utf8(csvs.pop().unwrap()).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "one scored variant, two SNR points");
    assert!(rows.iter().all(|r| r.contains("nam-uniform")));
    verify_outputs(&out_root.join("sweep")).unwrap();
    let manifest = RunManifest::read(&out_root.join("sweep")).unwrap();
    assert_eq!(manifest.skipped.len(), 1);
    assert!(manifest.outputs.contains(&"plot.py".to_string()));
}

#[test]
fn continual_map_artifacts_parse_and_inspect_memory_summarizes_them() {
    let tmp = tempfile::tempdir().unwrap();
    let out_root = tmp.path().join("out");
    let cfg = tiny_config(&out_root);
    let config = write_config(tmp.path(), &cfg);

    let out = run(semcom().args(["--config", config.to_str().unwrap(), "continual-map"]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let dir = out_root.join("continual");
    let csv = std::fs::read_to_string(dir.join("continual.csv")).unwrap();
    let variants = read_continual_csv(&csv).unwrap();
    let names: Vec<&str> = variants.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["with-med", "without-med"]);
    for (_, matrix) in &variants {
        assert_eq!(matrix.size(), 2);
        assert!(matrix.is_complete());
    }
    verify_outputs(&dir).unwrap();

    let snapshot = dir.join("memory-snapshot.json");
    let out = run(semcom().args(["inspect-memory", "--snapshot", snapshot.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert!(summary["ltm_len"].as_u64().unwrap() > 0, "tiny STM cap forces consolidation");
    assert!(summary["samples_by_source"].get("toy-cifar").is_some());

    let out = run(semcom().args(["inspect-memory", "--snapshot", "/no/such/snapshot.json"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("/no/such/snapshot.json"));
}
