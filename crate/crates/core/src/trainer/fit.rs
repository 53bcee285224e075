use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions};
use super::timing::TimingStats;
use super::KS;
use crate::data::SequenceExample;
use crate::error::{Error, Result};
use crate::model::{Adam, PrunePlan, Seq2Seq};
use crate::pruner::PruneStrategy;
use crate::sid::SidIndex;
use crate::tensor::TokenBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: PruneStrategy,
    /// 1-based encoder layer after which pruning happens.
    pub prune_layer: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between validations; 0 disables validation.
    pub valid_interval: usize,
    pub patience: usize,
    pub seed: u64,
    pub beam: usize,
    /// Validation uses at most this many examples (seeded subsample).
    pub valid_users: usize,
    /// Keep pruning active when generating.
    pub prune_at_eval: bool,
    pub eval_batch: usize,
    pub timing_warmup: usize,
    pub timing_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: PruneStrategy::none(),
            prune_layer: 2,
            lr: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.15,
            batch_size: 32,
            max_steps: 3000,
            valid_interval: 250,
            patience: 10,
            seed: 42,
            beam: 20,
            valid_users: 1000,
            prune_at_eval: true,
            eval_batch: 64,
            timing_warmup: 50,
            timing_window: 50,
        }
    }
}

impl TrainConfig {
    pub fn plan(&self) -> PrunePlan {
        PrunePlan::new(self.strategy, self.prune_layer)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: KS.to_vec(),
            beam: self.beam,
            batch_size: self.eval_batch,
            plan: if self.prune_at_eval { self.plan() } else { PrunePlan::none() },
        }
    }

    pub fn validate(&self, n_enc_layers: usize) -> Result<()> {
        self.strategy.validate()?;
        if self.prune_layer == 0 || self.prune_layer > n_enc_layers {
            return Err(Error::InvalidArgument(format!(
                "prune_layer {} outside [1, {n_enc_layers}]",
                self.prune_layer
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::InvalidArgument(
                "patience, batch_size and max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub recall5: f64,
    pub wall_step_ms_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation (the last step when validation is off).
    pub model: Seq2Seq<f32>,
    pub best_step: usize,
    pub best_recall5: Option<f64>,
    pub history: Vec<ValidationRecord>,
    pub losses: Vec<f64>,
    pub step_ms: Vec<f64>,
    pub steps_run: usize,
    pub timing: TimingStats,
}

fn subsample(examples: &[SequenceExample], n: usize, seed: u64) -> Vec<SequenceExample> {
    if examples.len() <= n {
        return examples.to_vec();
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    let mut keep = idx[..n].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| examples[i].clone()).collect()
}

/// Adam on shuffled mini-batches. Step time covers batch assembly, the
/// forward/backward pass and the update; validation is excluded. Training
/// stops after `patience` validations without a strictly higher Recall@5.
pub fn train(
    cfg: &TrainConfig,
    mut model: Seq2Seq<f32>,
    train_examples: &[SequenceExample],
    valid_examples: &[SequenceExample],
    index: &SidIndex,
    mut run_log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate(model.config().n_enc_layers)?;
    if train_examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    model.set_dropout(cfg.dropout)?;
    let plan = cfg.plan();
    let eval_opts = cfg.eval_options();
    let valid = subsample(valid_examples, cfg.valid_users, cfg.seed);
    let w = index.codebook_size();

    let mut adam = Adam::new(model.num_params(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    let mut cursor = order.len();

    let mut best: Option<(f64, usize, Seq2Seq<f32>)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(cfg.max_steps);
    let mut step_ms = Vec::with_capacity(cfg.max_steps);

    for step in 1..=cfg.max_steps {
        let t0 = Instant::now();
        let mut rows = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(order.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let e = &train_examples[order[cursor]];
            cursor += 1;
            rows.push(e.input_tokens.as_slice());
            targets.push(e.target_tokens(w));
        }
        let batch = TokenBatch::from_rows(&rows)?;
        let drop_seed = (cfg.dropout > 0.0).then(|| cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step as u64));
        let (loss, grad) = model.loss_and_grad(&batch, &targets, &plan, drop_seed)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        adam.step(model.params_mut(), &grad);
        step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        losses.push(f64::from(loss));

        if cfg.valid_interval > 0 && step % cfg.valid_interval == 0 && !valid.is_empty() {
            let report = evaluate(&model, &valid, index, &eval_opts)?;
            let recall5 = report.recall_at(5);
            let record = ValidationRecord {
                step,
                recall5,
                wall_step_ms_mean: step_ms.iter().sum::<f64>() / step_ms.len() as f64,
            };
            log::debug!("step {step}: loss {loss:.4} valid recall@5 {recall5:.4}");
            if let Some(sink) = run_log.as_deref_mut() {
                serde_json::to_writer(&mut *sink, &record)?;
                writeln!(sink).map_err(|e| Error::io("<run log>", e))?;
            }
            history.push(record);
            if best.as_ref().is_none_or(|(r, _, _)| recall5 > *r) {
                best = Some((recall5, step, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    let steps_run = losses.len();
    let timing = TimingStats::from_samples(&step_ms, cfg.timing_warmup, cfg.timing_window);
    let (best_recall5, best_step, model) = match best {
        Some((r, s, m)) => (Some(r), s, m),
        None => (None, steps_run, model),
    };
    Ok(TrainOutcome {
        model,
        best_step,
        best_recall5,
        history,
        losses,
        step_ms,
        steps_run,
        timing,
    })
}
