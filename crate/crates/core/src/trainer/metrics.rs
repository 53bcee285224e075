use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::timing::TimingStats;

/// Cutoffs reported everywhere.
pub const KS: [usize; 2] = [5, 10];

/// 1-based position of `target` in `ranked`.
pub fn hit_rank(ranked: &[String], target: &str) -> Option<usize> {
    ranked.iter().position(|x| x == target).map(|p| p + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub users: usize,
}

/// Recall@K and NDCG@K (single relevant item) from per-user hit ranks.
/// Sums are accumulated in user order, then divided once.
pub fn ranking_metrics(ranks: &[Option<usize>], ks: &[usize]) -> RankingMetrics {
    let n = ranks.len().max(1) as f64;
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        let (mut hits, mut gain) = (0.0, 0.0);
        for r in ranks.iter().flatten().filter(|&&r| r <= k) {
            hits += 1.0;
            gain += 1.0 / ((*r + 1) as f64).log2();
        }
        recall.insert(k, hits / n);
        ndcg.insert(k, gain / n);
    }
    RankingMetrics {
        recall,
        ndcg,
        users: ranks.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub users: usize,
    pub wall_step_ms: TimingStats,
    pub steps_run: usize,
    pub best_step: Option<usize>,
}

impl MetricsReport {
    pub fn from_ranking(m: RankingMetrics) -> Self {
        MetricsReport {
            recall: m.recall,
            ndcg: m.ndcg,
            users: m.users,
            wall_step_ms: TimingStats::default(),
            steps_run: 0,
            best_step: None,
        }
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}
