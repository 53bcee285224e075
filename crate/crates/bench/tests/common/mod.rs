// Shared by the bench integration tests; not every test uses every item.
#![allow(dead_code)]

pub const TINY: &str = r#"
synth_users = 60
synth_items = 40
synth_clusters = 4
synth_d_feat = 8
synth_min_history = 6
synth_max_history = 10
min_interactions = 3
levels = 2
codebook_size = 8
kmeans_iters = 10
d_model = 16
n_heads = 2
d_mlp = 32
n_enc_layers = 2
n_dec_layers = 1
max_seq = 24
strategy = "rastp"
prune_layer = 1
batch_size = 8
max_steps = 20
valid_interval = 10
beam = 10
dropout = 0.0
timing_warmup = 0
timing_window = 5
"#;

pub fn tiny() -> rastp_bench::ExperimentConfig {
    rastp_bench::ExperimentConfig::from_str_with(TINY, "tiny", &[]).unwrap()
}
