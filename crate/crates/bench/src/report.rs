use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::sweep::{read_csv, SweepRow, SUMMARY};

/// One value of the long-format aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    /// Source file stem.
    pub experiment: String,
    pub axis: String,
    pub axis_value: String,
    pub metric: String,
    /// Seed, or `mean` / `std` for the aggregate rows.
    pub seed: String,
    pub value: f64,
}

const METRICS: [&str; 7] = [
    "recall5",
    "recall10",
    "ndcg5",
    "ndcg10",
    "wall_step_ms",
    "baseline_wall_step_ms",
    "speedup_vs_baseline",
];

fn metric(r: &SweepRow, name: &str) -> f64 {
    match name {
        "recall5" => r.recall5,
        "recall10" => r.recall10,
        "ndcg5" => r.ndcg5,
        "ndcg10" => r.ndcg10,
        "wall_step_ms" => r.wall_step_ms,
        "baseline_wall_step_ms" => r.baseline_wall_step_ms,
        _ => r.speedup_vs_baseline,
    }
}

fn metric_std(r: &SweepRow, name: &str) -> Option<f64> {
    match name {
        "recall5" => r.recall5_std,
        "recall10" => r.recall10_std,
        "ndcg5" => r.ndcg5_std,
        "ndcg10" => r.ndcg10_std,
        "wall_step_ms" => r.wall_step_ms_std,
        "speedup_vs_baseline" => r.speedup_vs_baseline_std,
        _ => None,
    }
}

/// Reshape sweep tables into `(experiment, axis_value, metric)` rows, files
/// in argument order and rows in file order.
pub fn long_format(paths: &[impl AsRef<Path>]) -> Result<Vec<LongRow>> {
    let mut out = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let experiment = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for r in read_csv(path)? {
            let summary = r.seed == SUMMARY;
            for m in METRICS {
                let row = |seed: &str, value: f64| LongRow {
                    experiment: experiment.clone(),
                    axis: r.axis.clone(),
                    axis_value: r.value.clone(),
                    metric: m.to_string(),
                    seed: seed.to_string(),
                    value,
                };
                if summary {
                    out.push(row("mean", metric(&r, m)));
                    if let Some(s) = metric_std(&r, m) {
                        out.push(row("std", s));
                    }
                } else {
                    out.push(row(&r.seed, metric(&r, m)));
                }
            }
        }
    }
    Ok(out)
}

pub fn write_long(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
