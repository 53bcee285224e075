use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use rastp_core::data::{
    load_interactions, make_examples, popularity, split_leave_one_out, synth_corpus, InteractionLog, Phase,
    SequenceExample, SplitManifest, UserSplit,
};
use rastp_core::model::{CheckpointMeta, Seq2Seq};
use rastp_core::sid::{fit_codebooks, read_embeddings, ItemEmbedding, SidCodebooks, SidIndex};
use rastp_core::trainer::{evaluate, popularity_baseline, train, MetricsReport, TrainOutcome, KS};

use crate::config::ExperimentConfig;

/// Everything upstream of training; shared by all runs of a sweep.
pub struct Prepared {
    pub log: InteractionLog,
    pub embeddings: Vec<ItemEmbedding>,
    pub splits: Vec<UserSplit>,
    pub codebooks: SidCodebooks,
    pub index: SidIndex,
    pub popularity: HashMap<String, u64>,
    pub train: Vec<SequenceExample>,
    pub valid: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
}

/// Load or synthesize the corpus, split it, fit codebooks and build examples.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (log, embeddings) = match (&cfg.interactions, &cfg.embeddings) {
        (Some(i), Some(e)) => (load_interactions(i)?, read_embeddings(e)?),
        _ => synth_corpus(&cfg.synth_config())?,
    };
    let splits = split_leave_one_out(&log, cfg.min_interactions);
    anyhow::ensure!(!splits.is_empty(), "no user survives {}-core filtering", cfg.min_interactions);
    let popularity = popularity(&splits);
    let codebooks = fit_codebooks(&embeddings, cfg.levels, cfg.codebook_size, cfg.kmeans_iters, cfg.sid_seed)?;
    let index = SidIndex::build(&codebooks, &embeddings, Some(&popularity), cfg.dedup_level)?;
    let mode = cfg.example_mode();
    let train = make_examples(&splits, &index, cfg.max_seq, Phase::Train, mode)?;
    let valid = make_examples(&splits, &index, cfg.max_seq, Phase::Valid, mode)?;
    let test = make_examples(&splits, &index, cfg.max_seq, Phase::Test, mode)?;
    log::info!(
        "{} users, {} items, {} sequences, {} train examples",
        splits.len(),
        index.num_items(),
        index.num_sequences(),
        train.len()
    );
    Ok(Prepared {
        log,
        embeddings,
        splits,
        codebooks,
        index,
        popularity,
        train,
        valid,
        test,
    })
}

pub struct RunResult {
    /// Test metrics plus training timing.
    pub report: MetricsReport,
    pub baseline: MetricsReport,
    pub outcome: TrainOutcome,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    strategy: String,
    rho: f64,
    prune_layer: usize,
    seed: u64,
    test: &'a MetricsReport,
    popularity_baseline: &'a MetricsReport,
    best_valid_recall5: Option<f64>,
    final_loss: Option<f64>,
}

/// Train and evaluate one configuration on prepared data.
pub fn run_in_memory(cfg: &ExperimentConfig, data: &Prepared, run_log: Option<&mut dyn Write>) -> Result<RunResult> {
    let model = Seq2Seq::<f32>::new(cfg.model_config(), cfg.seed)?;
    let tcfg = cfg.train_config();
    let outcome = train(&tcfg, model, &data.train, &data.valid, &data.index, run_log)?;
    let mut report = if cfg.skip_eval {
        MetricsReport::from_ranking(rastp_core::trainer::ranking_metrics(&[], &[]))
    } else {
        evaluate(&outcome.model, &data.test, &data.index, &tcfg.eval_options())?
    };
    report.wall_step_ms = outcome.timing;
    report.steps_run = outcome.steps_run;
    report.best_step = Some(outcome.best_step);
    let baseline = popularity_baseline(&data.popularity, &data.test, &KS);
    Ok(RunResult {
        report,
        baseline,
        outcome,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Full pipeline with artifacts under `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunResult> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let data = prepare(cfg)?;
    write_json(
        &out_dir.join("split_manifest.json"),
        &SplitManifest::new(&data.log, &data.splits, cfg.min_interactions),
    )?;
    data.codebooks.save(out_dir.join("codebooks.bin"))?;

    let log_path = out_dir.join("run_log.jsonl");
    let mut run_log = BufWriter::new(File::create(&log_path)?);
    let result = run_in_memory(cfg, &data, Some(&mut run_log))?;
    run_log.flush()?;

    result.outcome.model.save_checkpoint(
        out_dir.join("checkpoint.bin"),
        CheckpointMeta {
            step: result.outcome.best_step,
            seed: cfg.seed,
        },
    )?;
    write_json(
        &out_dir.join("metrics.json"),
        &MetricsFile {
            strategy: cfg.strategy.to_string(),
            rho: cfg.rho,
            prune_layer: cfg.prune_layer,
            seed: cfg.seed,
            test: &result.report,
            popularity_baseline: &result.baseline,
            best_valid_recall5: result.outcome.best_recall5,
            final_loss: result.outcome.losses.last().copied(),
        },
    )?;
    write_manifest(
        out_dir,
        "run",
        &["config.toml", "split_manifest.json", "codebooks.bin", "run_log.jsonl", "checkpoint.bin", "metrics.json"],
    )?;
    Ok(result)
}

/// `manifest.json` listing the artifacts a subcommand produced.
pub fn write_manifest(out_dir: &Path, command: &str, files: &[&str]) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        files: &'a [&'a str],
    }
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            files,
        },
    )
}
