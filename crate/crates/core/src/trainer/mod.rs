//! Training loop with early stopping, ranking metrics and step timing.

mod eval;
mod fit;
mod metrics;
mod timing;

pub use eval::{evaluate, popularity_baseline, rank_items, EvalOptions};
pub use fit::{train, TrainConfig, TrainOutcome, ValidationRecord};
pub use metrics::{hit_rank, ranking_metrics, MetricsReport, RankingMetrics, KS};
pub use timing::{speedup, TimingStats};
