use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rastp_core::pruner::StrategyKind;
use rastp_core::trainer::{speedup, MetricsReport};

use crate::config::ExperimentConfig;
use crate::pipeline::{run_in_memory, Prepared};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 42, 999, 1024, 2025];

/// `seed` value of the per-value aggregate rows.
pub const SUMMARY: &str = "summary";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Strategy,
    Layer,
    Rho,
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(Axis::Strategy),
            "layer" => Ok(Axis::Layer),
            "rho" => Ok(Axis::Rho),
            _ => bail!("unknown axis `{s}` (expected strategy | layer | rho)"),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Strategy => "strategy",
            Axis::Layer => "layer",
            Axis::Rho => "rho",
        })
    }
}

impl Axis {
    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::Strategy => cfg.strategy = StrategyKind::from_str(value)?,
            Axis::Layer => {
                cfg.prune_layer = value.parse().with_context(|| format!("layer `{value}`"))?;
                if cfg.strategy == StrategyKind::None {
                    bail!("a layer sweep needs a pruning strategy, config has `none`");
                }
            }
            Axis::Rho => cfg.rho = value.parse().with_context(|| format!("rho `{value}`"))?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One CSV line. Data rows leave the `_std` columns empty; summary rows
/// carry means in the metric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: String,
    pub recall5: f64,
    pub recall10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub wall_step_ms: f64,
    pub baseline_wall_step_ms: f64,
    pub speedup_vs_baseline: f64,
    pub recall5_std: Option<f64>,
    pub recall10_std: Option<f64>,
    pub ndcg5_std: Option<f64>,
    pub ndcg10_std: Option<f64>,
    pub wall_step_ms_std: Option<f64>,
    pub speedup_vs_baseline_std: Option<f64>,
}

pub const COLUMNS: [&str; 16] = [
    "axis",
    "value",
    "seed",
    "recall5",
    "recall10",
    "ndcg5",
    "ndcg10",
    "wall_step_ms",
    "baseline_wall_step_ms",
    "speedup_vs_baseline",
    "recall5_std",
    "recall10_std",
    "ndcg5_std",
    "ndcg10_std",
    "wall_step_ms_std",
    "speedup_vs_baseline_std",
];

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn data_row(axis: Axis, value: &str, seed: u64, m: &MetricsReport, baseline_ms: f64) -> SweepRow {
    let ms = m.wall_step_ms.median_of_means;
    SweepRow {
        axis: axis.to_string(),
        value: value.to_string(),
        seed: seed.to_string(),
        recall5: m.recall_at(5),
        recall10: m.recall_at(10),
        ndcg5: m.ndcg_at(5),
        ndcg10: m.ndcg_at(10),
        wall_step_ms: ms,
        baseline_wall_step_ms: baseline_ms,
        speedup_vs_baseline: speedup(baseline_ms, ms),
        recall5_std: None,
        recall10_std: None,
        ndcg5_std: None,
        ndcg10_std: None,
        wall_step_ms_std: None,
        speedup_vs_baseline_std: None,
    }
}

fn summary_row(rows: &[SweepRow]) -> SweepRow {
    let col = |f: fn(&SweepRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
    let (r5, r5s) = col(|r| r.recall5);
    let (r10, r10s) = col(|r| r.recall10);
    let (n5, n5s) = col(|r| r.ndcg5);
    let (n10, n10s) = col(|r| r.ndcg10);
    let (ms, mss) = col(|r| r.wall_step_ms);
    let (base, _) = col(|r| r.baseline_wall_step_ms);
    let (_, sps) = col(|r| r.speedup_vs_baseline);
    SweepRow {
        axis: rows[0].axis.clone(),
        value: rows[0].value.clone(),
        seed: SUMMARY.into(),
        recall5: r5,
        recall10: r10,
        ndcg5: n5,
        ndcg10: n10,
        wall_step_ms: ms,
        baseline_wall_step_ms: base,
        // recomputable from the two timing columns of this row
        speedup_vs_baseline: speedup(base, ms),
        recall5_std: Some(r5s),
        recall10_std: Some(r10s),
        ndcg5_std: Some(n5s),
        ndcg10_std: Some(n10s),
        wall_step_ms_std: Some(mss),
        speedup_vs_baseline_std: Some(sps),
    }
}

/// Run every `(value, seed)` pair sequentially. The no-pruning baseline is
/// trained once per seed and reused. All values are validated before the
/// first run.
pub fn sweep(
    base: &ExperimentConfig,
    data: &Prepared,
    axis: Axis,
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        bail!("a sweep needs at least one seed");
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<_>>()?;
    let mut baselines: HashMap<u64, MetricsReport> = HashMap::new();
    let mut rows = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        let mut group = Vec::new();
        for &seed in seeds {
            let baseline_cfg = ExperimentConfig {
                strategy: StrategyKind::None,
                seed,
                ..cfg.clone()
            };
            if let Entry::Vacant(slot) = baselines.entry(seed) {
                log::info!("baseline seed {seed}");
                slot.insert(run_in_memory(&baseline_cfg, data, None)?.report);
            }
            let seeded = ExperimentConfig { seed, ..cfg.clone() };
            let report = if seeded.strategy == StrategyKind::None {
                baselines[&seed].clone()
            } else {
                log::info!("{axis}={value} seed {seed}");
                run_in_memory(&seeded, data, None)?.report
            };
            let base_ms = baselines[&seed].wall_step_ms.median_of_means;
            group.push(data_row(axis, value, seed, &report, base_ms));
        }
        let summary = summary_row(&group);
        rows.extend(group);
        rows.push(summary);
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if headers != COLUMNS {
        bail!("{}: not a sweep table (columns {:?})", path.display(), headers);
    }
    r.deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}
