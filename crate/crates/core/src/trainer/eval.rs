use std::collections::HashMap;

use super::metrics::{hit_rank, ranking_metrics, MetricsReport};
use crate::data::SequenceExample;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::{PrunePlan, Seq2Seq};
use crate::sid::SidIndex;
use crate::tensor::TokenBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub beam: usize,
    pub batch_size: usize,
    /// Applied to the encoder during generation.
    pub plan: PrunePlan,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: super::KS.to_vec(),
            beam: 20,
            batch_size: 64,
            plan: PrunePlan::none(),
        }
    }
}

/// Ranked item lists, one per example, at most `max(ks)` long. Generated
/// sequences expand into their collision buckets in bucket order.
pub fn rank_items<T: Scalar>(
    model: &Seq2Seq<T>,
    examples: &[SequenceExample],
    index: &SidIndex,
    opts: &EvalOptions,
) -> Result<Vec<Vec<String>>> {
    let top = opts.ks.iter().copied().max().unwrap_or(0);
    if opts.beam < top {
        return Err(Error::InvalidArgument(format!(
            "beam {} is smaller than the largest cutoff {top}",
            opts.beam
        )));
    }
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(opts.batch_size.max(1)) {
        let rows: Vec<&[u32]> = chunk.iter().map(|e| e.input_tokens.as_slice()).collect();
        let batch = TokenBatch::from_rows(&rows)?;
        let (hidden, mask) = model.encode_pruned(&batch, &opts.plan)?;
        for ranked in model.generate(&hidden, &mask, index, opts.beam)? {
            let mut items = Vec::with_capacity(top);
            for r in ranked {
                if items.len() >= top {
                    break;
                }
                items.extend(index.items(&r.sid).iter().take(top - items.len()).cloned());
            }
            out.push(items);
        }
    }
    Ok(out)
}

/// Recall@K and NDCG@K of generated rankings against each example's target.
pub fn evaluate<T: Scalar>(
    model: &Seq2Seq<T>,
    examples: &[SequenceExample],
    index: &SidIndex,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let ranked = rank_items(model, examples, index, opts)?;
    let ranks: Vec<Option<usize>> = ranked
        .iter()
        .zip(examples)
        .map(|(r, e)| hit_rank(r, &e.target_item))
        .collect();
    Ok(MetricsReport::from_ranking(ranking_metrics(&ranks, &opts.ks)))
}

/// Everyone gets the same list: most frequent training items, ties by id.
pub fn popularity_baseline(
    popularity: &HashMap<String, u64>,
    examples: &[SequenceExample],
    ks: &[usize],
) -> MetricsReport {
    let top = ks.iter().copied().max().unwrap_or(0);
    let mut items: Vec<(&String, &u64)> = popularity.iter().collect();
    items.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let ranked: Vec<String> = items.into_iter().take(top).map(|(i, _)| i.clone()).collect();
    let ranks: Vec<Option<usize>> = examples.iter().map(|e| hit_rank(&ranked, &e.target_item)).collect();
    MetricsReport::from_ranking(ranking_metrics(&ranks, ks))
}
