use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::log::{Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::sid::ItemEmbedding;

/// Clustered corpus: item features are Gaussian blobs, users favour one blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub d_feat: usize,
    pub seed: u64,
    /// Interactions per user, inclusive range.
    pub min_history: usize,
    pub max_history: usize,
    /// Probability an interaction falls in the user's preferred cluster.
    pub in_cluster: f64,
    /// Probability an in-cluster step moves to the successor of the user's
    /// previous in-cluster item (ring order within the cluster).
    pub successor: f64,
    /// Spread of items around their cluster centre; centres are unit normal.
    pub sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_items: 500,
            n_clusters: 20,
            d_feat: 32,
            seed: 0,
            min_history: 8,
            max_history: 24,
            in_cluster: 0.8,
            successor: 0.5,
            sigma: 0.1,
        }
    }
}

pub fn item_name(i: usize) -> String {
    format!("item{i:05}")
}

fn user_name(u: usize) -> String {
    format!("user{u:05}")
}

/// Generate `(log, item embeddings)`. Item `i` belongs to cluster
/// `i mod n_clusters`. Deterministic in `seed`.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(InteractionLog, Vec<ItemEmbedding>)> {
    if cfg.n_clusters == 0 || cfg.n_items < cfg.n_clusters {
        return Err(Error::InvalidArgument(format!(
            "need n_items ({}) >= n_clusters ({}) >= 1",
            cfg.n_items, cfg.n_clusters
        )));
    }
    if cfg.min_history == 0 || cfg.max_history < cfg.min_history {
        return Err(Error::InvalidArgument("history range is empty".into()));
    }
    for (name, p) in [("in_cluster", cfg.in_cluster), ("successor", cfg.successor)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0f64, 1.0).expect("unit normal");

    let centres: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| (0..cfg.d_feat).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let items: Vec<ItemEmbedding> = (0..cfg.n_items)
        .map(|i| {
            let v = centres[i % cfg.n_clusters]
                .iter()
                .map(|&c| (c + cfg.sigma * unit.sample(&mut rng)) as f32)
                .collect();
            ItemEmbedding::new(item_name(i), v)
        })
        .collect();
    let members: Vec<Vec<usize>> = (0..cfg.n_clusters)
        .map(|c| (c..cfg.n_items).step_by(cfg.n_clusters).collect())
        .collect();

    let mut records = Vec::new();
    for u in 0..cfg.n_users {
        let pool = &members[rng.random_range(0..cfg.n_clusters)];
        let len = rng.random_range(cfg.min_history..=cfg.max_history);
        let mut t: i64 = 1_600_000_000 + rng.random_range(0..1_000_000);
        // position of the last in-cluster item within `pool`
        let mut last: Option<usize> = None;
        for _ in 0..len {
            let item = if rng.random_bool(cfg.in_cluster) {
                let pos = match last {
                    Some(p) if rng.random_bool(cfg.successor) => (p + 1) % pool.len(),
                    _ => rng.random_range(0..pool.len()),
                };
                last = Some(pos);
                pool[pos]
            } else {
                rng.random_range(0..cfg.n_items)
            };
            records.push(Interaction {
                user_id: user_name(u),
                item_id: item_name(item),
                timestamp: t,
            });
            t += rng.random_range(1..=86_400);
        }
    }
    Ok((InteractionLog::from_records(records), items))
}
