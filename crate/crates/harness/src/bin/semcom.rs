//! Command-line front end: train sweep variants, trace single images,
//! run the SNR sweep and the continual-learning protocol, and inspect
//! saved replay memory. Every artifact-producing command writes a
//! `manifest.json` and verifies it against its run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use semcom_core::channel::SnrDb;
use semcom_core::med::PoolSnapshot;
use semcom_core::metrics::{write_bleu_csv, write_continual_csv};
use semcom_core::rng::{RunRng, Stream};
use semcom_harness::config::{config_reference, parse_variant, ExperimentConfig};
use semcom_harness::error::{HarnessError, Result};
use semcom_harness::experiments::{
    continual_experiment, demo_image, find_record, first_dataset_drop, snr_sweep, DeviationLog,
};
use semcom_harness::manifest::{
    verify_outputs, write_plot_stub, RunManifest, BLEU_CSV_FILE, CONTINUAL_CSV_FILE,
    SNAPSHOT_FILE, TRACE_FILE,
};
use semcom_harness::pipeline::run_traced;
use semcom_harness::system::{
    build_corpora, caption_vocab, make_backend, union_eval_sequences, union_train_sequences,
    TrainedSystem, PARAMS_FILE,
};

#[derive(Parser)]
#[command(
    name = "semcom",
    version,
    about = "Semantic communication simulator: train, trace, sweep, and continual-learning runs"
)]
struct Cli {
    /// TOML experiment configuration; the built-in toy preset when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the configuration key reference and the toy preset, then exit.
    #[arg(long)]
    config_reference: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one sweep variant and save its checkpoint.
    Train {
        /// Variant name: `nam-uniform` or `fixed-<dB>`.
        #[arg(long, default_value = "nam-uniform")]
        variant: String,
    },
    /// Send one image end to end at a chosen SNR and write a full trace.
    Pipeline {
        /// Checkpoint directory from `train`; untrained weights when absent.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        /// Record id from the configured datasets, or the built-in demo.
        #[arg(long, default_value = "demo/fire-beach/000")]
        image: String,
        /// Channel SNR in dB; `[snr] val_db` from the config when absent.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Channel seed; `[seeds] eval` from the config when absent.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score every trained variant across the SNR grid into a CSV.
    SweepSnr,
    /// Run the sequential continual-learning protocol (with and without
    /// replay memory) and write the stage-by-dataset CSV.
    ContinualMap,
    /// Summarize a replay-memory snapshot written by `continual-map`.
    InspectMemory {
        /// Path to a memory-snapshot.json file.
        #[arg(long, value_name = "FILE")]
        snapshot: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::toy(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(what: &str, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(HarnessError::Config(format!(
            "{what} directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, variant: &str) -> Result<()> {
    let start = Instant::now();
    let kind = parse_variant(variant)?;
    let vocab = caption_vocab();
    let kb = make_backend(cfg)?;
    let corpora = build_corpora(cfg, &vocab, kb.as_ref())?;
    let train = union_train_sequences(&corpora);
    let val = union_eval_sequences(&corpora);

    let mut sys = TrainedSystem::init(&cfg.arch()?, cfg.seeds.master)?;
    let report = sys.train(cfg, kind, &train, &val)?;

    let dir = cfg.output.dir.join("checkpoints").join(variant);
    let files = sys.save(&dir)?;
    let mut manifest = RunManifest::new("train", &cfg.config_hash(), cfg.seeds.master);
    for f in files {
        manifest.record_output(f);
    }
    manifest.checkpoints.push(PARAMS_FILE.to_string());
    manifest.record_metric("best_val_ce", report.best_val_ce);
    manifest.record_metric("rounds", report.rounds.len() as f64);
    manifest.record_metric("converged", f64::from(report.converged));
    manifest.record_metric("train_sentences", train.len() as f64);
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&dir)?;
    verify_outputs(&dir)?;

    println!(
        "trained {variant}: best validation CE {:.4} after {} round(s){} -> {}",
        report.best_val_ce,
        report.rounds.len(),
        if report.converged { ", converged" } else { "" },
        dir.display()
    );
    Ok(())
}

fn cmd_pipeline(
    cfg: &ExperimentConfig,
    checkpoint: &Option<PathBuf>,
    image: &str,
    snr_db: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let start = Instant::now();
    let sys = match checkpoint {
        Some(dir) => {
            require_dir("checkpoint", dir)?;
            TrainedSystem::load(dir)?
        }
        None => TrainedSystem::init(&cfg.arch()?, cfg.seeds.master)?,
    };
    let kb = make_backend(cfg)?;
    let demo = demo_image();
    let img = if image == demo.id {
        demo
    } else {
        let vocab = caption_vocab();
        let corpora = build_corpora(cfg, &vocab, kb.as_ref())?;
        find_record(&corpora, image)
            .map(|r| r.image.clone())
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "image {image:?} is not in the configured datasets (try {:?})",
                    demo.id
                ))
            })?
    };

    let snr = SnrDb(snr_db.unwrap_or(cfg.snr.val_db));
    let seed = seed.unwrap_or(cfg.seeds.eval);
    let mut rng = RunRng::new(seed).stream(Stream::Noise);
    let (recon, trace) = run_traced(&sys, kb.as_ref(), &img, snr, cfg.channel.kind, &mut rng)?;

    let dir = cfg.output.dir.join("pipeline");
    std::fs::create_dir_all(&dir)?;
    let json = serde_json::to_string_pretty(&trace)
        .map_err(|e| HarnessError::Run(format!("cannot serialize trace: {e}")))?;
    std::fs::write(dir.join(TRACE_FILE), json + "\n")?;

    let mut manifest = RunManifest::new("pipeline", &cfg.config_hash(), seed);
    manifest.record_output(TRACE_FILE);
    manifest.record_metric("snr_db", trace.snr_db);
    manifest.record_metric("symbols", trace.transmitted.len() as f64);
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&dir)?;
    verify_outputs(&dir)?;

    println!("sent     {} ({})", img.id, trace.caption);
    println!("received {:?} at {} dB", trace.decoded_text, trace.snr_db);
    println!("reconstructed {} -> {}", recon.id, dir.join(TRACE_FILE).display());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let vocab = caption_vocab();
    let kb = make_backend(cfg)?;
    let corpora = build_corpora(cfg, &vocab, kb.as_ref())?;
    let eval: Vec<_> = corpora.iter().flat_map(|c| c.eval.iter().cloned()).collect();

    let mut variants = Vec::new();
    let mut skipped = Vec::new();
    for name in &cfg.sweep.variants {
        parse_variant(name)?;
        let dir = cfg.output.dir.join("checkpoints").join(name);
        if dir.is_dir() {
            variants.push((name.clone(), TrainedSystem::load(&dir)?));
        } else {
            skipped.push(format!("{name}: no checkpoint at {}", dir.display()));
        }
    }

    let mut deviations = DeviationLog::new();
    let rows = snr_sweep(cfg, &variants, &eval, &mut deviations)?;
    let csv = write_bleu_csv(&rows)?;

    let dir = cfg.output.dir.join("sweep");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(BLEU_CSV_FILE), &csv)?;
    let plot = write_plot_stub(&dir)?;

    let mut manifest = RunManifest::new("sweep-snr", &cfg.config_hash(), cfg.seeds.master);
    manifest.record_output(BLEU_CSV_FILE);
    manifest.record_output(plot);
    manifest.record_metric("rows", rows.len() as f64);
    manifest.record_metric("variants_scored", variants.len() as f64);
    manifest.deviations = deviations.lines();
    manifest.skipped = skipped.clone();
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&dir)?;
    verify_outputs(&dir)?;

    for s in &skipped {
        eprintln!("semcom: skipped {s}");
    }
    println!(
        "swept {} variant(s) over {} SNR point(s): {} rows -> {}",
        variants.len(),
        cfg.snr.test_db.len(),
        rows.len(),
        dir.join(BLEU_CSV_FILE).display()
    );
    Ok(())
}

fn cmd_continual(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let vocab = caption_vocab();
    let kb = make_backend(cfg)?;
    let corpora = build_corpora(cfg, &vocab, kb.as_ref())?;

    let outcome = continual_experiment(cfg, &corpora)?;
    let csv = write_continual_csv(&[
        ("with-med".to_string(), outcome.with_med.clone()),
        ("without-med".to_string(), outcome.without_med.clone()),
    ])?;

    let dir = cfg.output.dir.join("continual");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONTINUAL_CSV_FILE), &csv)?;
    let snap_json = serde_json::to_string_pretty(&outcome.snapshot)
        .map_err(|e| HarnessError::Run(format!("cannot serialize snapshot: {e}")))?;
    std::fs::write(dir.join(SNAPSHOT_FILE), snap_json + "\n")?;
    let plot = write_plot_stub(&dir)?;

    let mut manifest = RunManifest::new("continual-map", &cfg.config_hash(), cfg.seeds.master);
    manifest.record_output(CONTINUAL_CSV_FILE);
    manifest.record_output(SNAPSHOT_FILE);
    manifest.record_output(plot);
    manifest.record_metric("pushes", outcome.counters.pushes as f64);
    manifest.record_metric("consolidations", outcome.counters.consolidations as f64);
    manifest.record_metric("transferred", outcome.counters.transferred as f64);
    manifest.record_metric("dropped", outcome.counters.dropped as f64);
    if let Some(drop) = first_dataset_drop(&outcome.with_med) {
        manifest.record_metric("first_dataset_drop_with_med", drop);
    }
    if let Some(drop) = first_dataset_drop(&outcome.without_med) {
        manifest.record_metric("first_dataset_drop_without_med", drop);
    }
    manifest.deviations = outcome.deviations.lines();
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&dir)?;
    verify_outputs(&dir)?;

    println!(
        "continual protocol over {} dataset(s): {} consolidation(s), {} sample(s) in LTM -> {}",
        corpora.len(),
        outcome.counters.consolidations,
        outcome.snapshot.ltm.len(),
        dir.join(CONTINUAL_CSV_FILE).display()
    );
    Ok(())
}

fn cmd_inspect_memory(snapshot: &Path) -> Result<()> {
    if !snapshot.is_file() {
        return Err(HarnessError::Config(format!(
            "snapshot file {} does not exist",
            snapshot.display()
        )));
    }
    let text = std::fs::read_to_string(snapshot)?;
    let snap: PoolSnapshot = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Run(format!("corrupt snapshot {}: {e}", snapshot.display())))?;

    let mut by_source: BTreeMap<&str, u64> = BTreeMap::new();
    for s in snap.stm.iter().chain(&snap.ltm) {
        *by_source.entry(s.source.as_str()).or_insert(0) += 1;
    }
    let summary = serde_json::json!({
        "version": snap.version,
        "n_stm_max": snap.n_stm_max,
        "lambda": snap.lambda,
        "tau": snap.tau,
        "stm_len": snap.stm.len(),
        "ltm_len": snap.ltm.len(),
        "counters": snap.counters,
        "samples_by_source": by_source,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary)
            .map_err(|e| HarnessError::Run(format!("cannot render summary: {e}")))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.config_reference {
        print!("{}", config_reference());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(HarnessError::Config(
            "no subcommand given; see --help or --config-reference".to_string(),
        ));
    };
    match &command {
        Command::InspectMemory { snapshot } => cmd_inspect_memory(snapshot),
        Command::Train { variant } => cmd_train(&load_config(&cli.config)?, variant),
        Command::Pipeline { checkpoint, image, snr_db, seed } => {
            cmd_pipeline(&load_config(&cli.config)?, checkpoint, image, *snr_db, *seed)
        }
        Command::SweepSnr => cmd_sweep(&load_config(&cli.config)?),
        Command::ContinualMap => cmd_continual(&load_config(&cli.config)?),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.one_line());
        std::process::exit(err.exit_code());
    }
}
