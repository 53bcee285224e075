use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::log::{Interaction, InteractionLog};

/// One user's chronological history cut into train / valid / test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSplit {
    pub user_id: String,
    /// Everything before the last two interactions.
    pub train: Vec<String>,
    pub valid: String,
    pub test: String,
    /// Timestamps of `train ++ [valid, test]`.
    pub timestamps: Vec<i64>,
}

/// Drop users and items with fewer than `min` interactions, repeating until
/// nothing changes.
pub fn five_core(log: &InteractionLog, min: usize) -> InteractionLog {
    let mut records: Vec<&Interaction> = log.records().iter().collect();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let before = records.len();
        records.retain(|r| users[r.user_id.as_str()] >= min && items[r.item_id.as_str()] >= min);
        if records.len() == before {
            break;
        }
    }
    InteractionLog::from_records(records.into_iter().cloned().collect())
}

/// Leave-one-out split after iterative `min_interactions`-core filtering.
/// Users come out sorted by id; users with fewer than three interactions
/// (possible only when `min_interactions < 3`) are skipped.
pub fn split_leave_one_out(log: &InteractionLog, min_interactions: usize) -> Vec<UserSplit> {
    let filtered = five_core(log, min_interactions);
    filtered
        .by_user()
        .into_iter()
        .filter(|(_, rs)| rs.len() >= 3)
        .map(|(user, rs)| {
            let n = rs.len();
            UserSplit {
                user_id: user.to_string(),
                train: rs[..n - 2].iter().map(|r| r.item_id.clone()).collect(),
                valid: rs[n - 2].item_id.clone(),
                test: rs[n - 1].item_id.clone(),
                timestamps: rs.iter().map(|r| r.timestamp).collect(),
            }
        })
        .collect()
}

/// Occurrences of each item in the training portions.
pub fn popularity(splits: &[UserSplit]) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for s in splits {
        for item in &s.train {
            *counts.entry(item.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Audit record of a split, written next to run artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct SplitManifest {
    pub min_interactions: usize,
    pub records_in: usize,
    pub records_kept: usize,
    pub users: usize,
    pub items: usize,
    /// user → (train length, valid item, test item)
    pub per_user: BTreeMap<String, (usize, String, String)>,
}

impl SplitManifest {
    pub fn new(log: &InteractionLog, splits: &[UserSplit], min_interactions: usize) -> Self {
        let mut items: Vec<&str> = splits
            .iter()
            .flat_map(|s| s.train.iter().chain([&s.valid, &s.test]))
            .map(String::as_str)
            .collect();
        items.sort_unstable();
        items.dedup();
        SplitManifest {
            min_interactions,
            records_in: log.len(),
            records_kept: splits.iter().map(|s| s.timestamps.len()).sum(),
            users: splits.len(),
            items: items.len(),
            per_user: splits
                .iter()
                .map(|s| (s.user_id.clone(), (s.train.len(), s.valid.clone(), s.test.clone())))
                .collect(),
        }
    }
}
