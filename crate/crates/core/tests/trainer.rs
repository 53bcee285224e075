use rastp_core::data::{
    make_examples, popularity, split_leave_one_out, synth_corpus, ExampleMode, Phase, SequenceExample,
    SynthConfig,
};
use rastp_core::model::{CheckpointMeta, ModelConfig, Seq2Seq};
use rastp_core::pruner::PruneStrategy;
use rastp_core::sid::{fit_codebooks, SidIndex};
use rastp_core::tokens::vocab_size;
use rastp_core::trainer::{
    evaluate, hit_rank, popularity_baseline, ranking_metrics, train, TrainConfig, TimingStats,
};

struct Fixture {
    index: SidIndex,
    train: Vec<SequenceExample>,
    valid: Vec<SequenceExample>,
    test: Vec<SequenceExample>,
    pop: std::collections::HashMap<String, u64>,
}

fn fixture(n_clusters: usize) -> Fixture {
    let (log, items) = synth_corpus(&SynthConfig {
        n_users: 80,
        n_items: 40,
        n_clusters,
        d_feat: 8,
        min_history: 6,
        max_history: 10,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let splits = split_leave_one_out(&log, 3);
    let pop = popularity(&splits);
    let cb = fit_codebooks(&items, 2, 8, 10, 1).unwrap();
    let index = SidIndex::build(&cb, &items, Some(&pop), false).unwrap();
    let ex = |p| make_examples(&splits, &index, 24, p, ExampleMode::AllPrefixes).unwrap();
    Fixture {
        train: ex(Phase::Train),
        valid: ex(Phase::Valid),
        test: ex(Phase::Test),
        index,
        pop,
    }
}

fn small_model(seed: u64) -> Seq2Seq<f32> {
    let cfg = ModelConfig {
        vocab_size: vocab_size(2, 8),
        d_model: 16,
        n_heads: 2,
        d_mlp: 32,
        n_enc_layers: 2,
        n_dec_layers: 1,
        dropout: 0.0,
        max_seq: 24,
        target_len: 2,
    };
    Seq2Seq::new(cfg, seed).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        dropout: 0.0,
        batch_size: 8,
        max_steps: 30,
        valid_interval: 10,
        patience: 5,
        beam: 10,
        seed: 3,
        timing_warmup: 0,
        timing_window: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn hand_enumerated_metrics() {
    // ranks for ten users; None = miss
    let ranks = [Some(1), Some(2), Some(3), Some(5), Some(6), Some(10), Some(11), None, Some(1), Some(4)];
    let m = ranking_metrics(&ranks, &[5, 10]);
    // hits@5: ranks 1,2,3,5,1,4 → 6; hits@10 adds 6 and 10 → 8
    assert_eq!(m.recall[&5], 0.6);
    assert_eq!(m.recall[&10], 0.8);
    let g = |r: f64| 1.0 / (r + 1.0).log2();
    let ndcg5 = (g(1.0) + g(2.0) + g(3.0) + g(5.0) + g(1.0) + g(4.0)) / 10.0;
    let ndcg10 = (g(1.0) + g(2.0) + g(3.0) + g(5.0) + g(6.0) + g(10.0) + g(1.0) + g(4.0)) / 10.0;
    assert_eq!(m.ndcg[&5], ndcg5);
    assert_eq!(m.ndcg[&10], ndcg10);
    assert_eq!(m.users, 10);

    let list: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
    assert_eq!(hit_rank(&list, "x2"), Some(3));
}

#[test]
fn patience_one_stops_after_two_flat_validations() {
    let f = fixture(4);
    // a zero learning rate keeps the validation score constant
    let cfg = TrainConfig {
        lr: 0.0,
        weight_decay: 0.0,
        patience: 1,
        max_steps: 100,
        ..quick_config()
    };
    let out = train(&cfg, small_model(1), &f.train, &f.valid, &f.index, None).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.steps_run, 20);
    assert_eq!(out.best_step, 10);
}

#[test]
fn best_checkpoint_dominates_later_validations() {
    let f = fixture(4);
    let mut log = Vec::new();
    let cfg = TrainConfig {
        max_steps: 60,
        patience: 2,
        ..quick_config()
    };
    let out = train(&cfg, small_model(2), &f.train, &f.valid, &f.index, Some(&mut log)).unwrap();
    let lines: Vec<serde_json::Value> = std::str::from_utf8(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), out.history.len());
    let best = out.best_recall5.unwrap();
    for rec in &out.history {
        if rec.step > out.best_step {
            assert!(best >= rec.recall5);
        }
    }
    for line in lines {
        for key in ["step", "recall5", "wall_step_ms_mean"] {
            assert!(line.get(key).is_some());
        }
    }
}

#[test]
fn rho_one_reproduces_unpruned_training() {
    let f = fixture(4);
    let none = train(&quick_config(), small_model(3), &f.train, &f.valid, &f.index, None).unwrap();
    let cfg = TrainConfig {
        strategy: PruneStrategy::rastp(1.0),
        prune_layer: 1,
        ..quick_config()
    };
    let full = train(&cfg, small_model(3), &f.train, &f.valid, &f.index, None).unwrap();
    assert_eq!(none.losses, full.losses);
    assert_eq!(none.model.params(), full.model.params());
    let a = evaluate(&none.model, &f.test, &f.index, &quick_config().eval_options()).unwrap();
    let b = evaluate(&full.model, &f.test, &f.index, &cfg.eval_options()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let f = fixture(4);
    let out = train(&quick_config(), small_model(4), &f.train, &f.valid, &f.index, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.bin");
    out.model.save_checkpoint(&p, CheckpointMeta { step: out.best_step, seed: 4 }).unwrap();
    let (back, meta) = Seq2Seq::<f32>::load_checkpoint(&p).unwrap();
    assert_eq!(meta.step, out.best_step);
    let opts = quick_config().eval_options();
    let a = evaluate(&out.model, &f.test, &f.index, &opts).unwrap();
    let b = evaluate(&back, &f.test, &f.index, &opts).unwrap();
    assert_eq!(a, b);
    // metric bounds
    for k in [5, 10] {
        assert!((0.0..=1.0).contains(&a.recall_at(k)));
        assert!(a.ndcg_at(k) <= a.recall_at(k));
    }
    assert!(a.recall_at(5) <= a.recall_at(10));
}

#[test]
fn single_cluster_training_beats_uniform_loss() {
    let f = fixture(1);
    let cfg = TrainConfig {
        max_steps: 500,
        valid_interval: 0,
        ..quick_config()
    };
    let out = train(&cfg, small_model(5), &f.train, &f.valid, &f.index, None).unwrap();
    let uniform = 2.0 * (vocab_size(2, 8) as f64).ln();
    let tail: f64 = out.losses[450..].iter().sum::<f64>() / 50.0;
    assert!(tail < uniform, "{tail} vs {uniform}");
    assert_eq!(out.best_recall5, None);
    assert_eq!(out.steps_run, 500);
}

#[test]
fn popularity_baseline_and_errors() {
    let f = fixture(4);
    let m = popularity_baseline(&f.pop, &f.test, &[5, 10]);
    assert!(m.recall_at(5) <= m.recall_at(10));
    let cfg = TrainConfig {
        beam: 5,
        ..quick_config()
    };
    assert!(evaluate(&small_model(6), &f.test, &f.index, &cfg.eval_options()).is_err());
    assert!(train(&quick_config(), small_model(6), &[], &f.valid, &f.index, None).is_err());
    let bad = TrainConfig {
        prune_layer: 3,
        ..quick_config()
    };
    assert!(train(&bad, small_model(6), &f.train, &f.valid, &f.index, None).is_err());
    assert_eq!(TimingStats::from_samples(&[], 0, 1), TimingStats::default());
}
