use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use rastp_bench::config::{parse_overrides, ConfigError, ExperimentConfig};
use rastp_bench::pipeline::{prepare, run, write_manifest};
use rastp_bench::report::{long_format, write_long};
use rastp_bench::sweep::{sweep, write_csv, Axis, DEFAULT_SEEDS};
use rastp_core::data::{synth_corpus, write_interactions};
use rastp_core::sid::{fit_codebooks, write_embeddings_text, SidIndex};

#[derive(Parser)]
#[command(name = "rastp", version, about = "Semantic-ID token pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic interaction log and item features.
    Synth(Common),
    /// Fit codebooks and write the item → SID index.
    Tokenize(Common),
    /// Tokenize, train and evaluate one configuration.
    Run(Common),
    /// Repeat `run` over one axis and several seeds; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Merge sweep CSVs into one long-format table.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Common {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Config overrides: `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self, required: bool) -> Result<ExperimentConfig, ConfigError> {
        let overrides = parse_overrides(&self.overrides)?;
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides),
            None if required => Err(ConfigError::Invalid {
                path: "<command line>".into(),
                message: "--config is required".into(),
            }),
            None => ExperimentConfig::from_str_with("", "<defaults>", &overrides),
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => {
            let cfg = c.load(false)?;
            mkdir(&c.out_dir)?;
            let (log, items) = synth_corpus(&cfg.synth_config())?;
            write_interactions(c.out_dir.join("interactions.tsv"), &log)?;
            write_embeddings_text(c.out_dir.join("embeddings.txt"), &items)?;
            write_manifest(&c.out_dir, "synth", &["interactions.tsv", "embeddings.txt"])?;
            println!("{} interactions, {} items", log.len(), items.len());
        }
        Command::Tokenize(c) => {
            let cfg = c.load(false)?;
            mkdir(&c.out_dir)?;
            let items = match &cfg.embeddings {
                Some(p) => rastp_core::sid::read_embeddings(p)?,
                None => synth_corpus(&cfg.synth_config())?.1,
            };
            let cb = fit_codebooks(&items, cfg.levels, cfg.codebook_size, cfg.kmeans_iters, cfg.sid_seed)?;
            cb.save(c.out_dir.join("codebooks.bin"))?;
            let index = SidIndex::build(&cb, &items, None, cfg.dedup_level)?;
            let forward: std::collections::BTreeMap<&str, &[u32]> = items
                .iter()
                .map(|e| (e.item_id.as_str(), index.sid(&e.item_id).expect("indexed").codes()))
                .collect();
            std::fs::write(c.out_dir.join("sid_index.json"), serde_json::to_string_pretty(&forward)?)?;
            write_manifest(&c.out_dir, "tokenize", &["codebooks.bin", "sid_index.json"])?;
            println!("{} items → {} distinct SIDs", index.num_items(), index.num_sequences());
        }
        Command::Run(c) => {
            let cfg = c.load(true)?;
            let r = run(&cfg, &c.out_dir)?;
            let step = r.report.wall_step_ms.median_of_means;
            if cfg.skip_eval {
                println!("evaluation skipped  step {step:.2} ms");
            } else {
                println!(
                    "recall@10 {:.4}  ndcg@10 {:.4}  step {step:.2} ms  (popularity recall@10 {:.4})",
                    r.report.recall_at(10),
                    r.report.ndcg_at(10),
                    r.baseline.recall_at(10)
                );
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => {
            let cfg = common.load(true)?;
            let axis: Axis = axis.parse()?;
            for v in &values {
                axis.apply(&cfg, v)?;
            }
            mkdir(&common.out_dir)?;
            std::fs::write(common.out_dir.join("config.toml"), cfg.to_toml())?;
            let data = prepare(&cfg)?;
            let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
            let rows = sweep(&cfg, &data, axis, &values, &seeds)?;
            write_csv(&common.out_dir.join("sweep.csv"), &rows)?;
            write_manifest(&common.out_dir, "sweep", &["config.toml", "sweep.csv"])?;
            println!("{} rows → {}", rows.len(), common.out_dir.join("sweep.csv").display());
        }
        Command::Report { out, csv } => {
            let rows = long_format(&csv)?;
            write_long(&out, &rows)?;
            println!("{} rows → {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid_config = e.downcast_ref::<ConfigError>().is_some();
            ExitCode::from(if invalid_config { 2 } else { 1 })
        }
    }
}
