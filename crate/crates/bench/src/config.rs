use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rastp_core::data::{ExampleMode, SynthConfig};
use rastp_core::model::ModelConfig;
use rastp_core::pruner::{PruneStrategy, StrategyKind};
use rastp_core::tokens::vocab_size;
use rastp_core::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    Missing(PathBuf),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Every knob of one experiment, as flat `key = value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // data
    /// Interaction log (`user<TAB>item<TAB>timestamp`); synthesized when absent.
    pub interactions: Option<PathBuf>,
    /// Item features (text or binary); required with `interactions`.
    pub embeddings: Option<PathBuf>,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_clusters: usize,
    pub synth_d_feat: usize,
    pub synth_seed: u64,
    pub synth_min_history: usize,
    pub synth_max_history: usize,
    pub synth_in_cluster: f64,
    pub synth_successor: f64,
    pub synth_sigma: f64,
    pub min_interactions: usize,
    pub max_seq: usize,
    pub single_target: bool,

    // semantic ids
    pub levels: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub sid_seed: u64,
    pub dedup_level: bool,

    // model
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,

    // training and pruning
    pub strategy: StrategyKind,
    pub rho: f64,
    pub pool_window: usize,
    pub prune_layer: usize,
    pub prune_at_eval: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub valid_interval: usize,
    pub patience: usize,
    pub seed: u64,
    pub beam: usize,
    pub valid_users: usize,
    pub eval_batch: usize,
    pub timing_warmup: usize,
    pub timing_window: usize,
    /// Skip test-set evaluation (timing-only runs).
    pub skip_eval: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let t = TrainConfig::default();
        ExperimentConfig {
            interactions: None,
            embeddings: None,
            synth_users: s.n_users,
            synth_items: s.n_items,
            synth_clusters: s.n_clusters,
            synth_d_feat: s.d_feat,
            synth_seed: s.seed,
            synth_min_history: s.min_history,
            synth_max_history: s.max_history,
            synth_in_cluster: s.in_cluster,
            synth_successor: s.successor,
            synth_sigma: s.sigma,
            min_interactions: 5,
            max_seq: 120,
            single_target: false,
            levels: 3,
            codebook_size: 32,
            kmeans_iters: 25,
            sid_seed: 0,
            dedup_level: false,
            d_model: 64,
            n_heads: 4,
            d_mlp: 256,
            n_enc_layers: 2,
            n_dec_layers: 2,
            strategy: t.strategy.kind,
            rho: t.strategy.rho,
            pool_window: t.strategy.pool_window,
            prune_layer: t.prune_layer,
            prune_at_eval: t.prune_at_eval,
            lr: t.lr,
            weight_decay: t.weight_decay,
            dropout: t.dropout,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            valid_interval: t.valid_interval,
            patience: t.patience,
            seed: t.seed,
            beam: t.beam,
            valid_users: t.valid_users,
            eval_batch: t.eval_batch,
            timing_warmup: t.timing_warmup,
            timing_window: t.timing_window,
            skip_eval: false,
        }
    }
}

/// Parse one override value: TOML literal when it is one, bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Split `--key value` / `--key=value` arguments into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let bad = |message: String| ConfigError::Invalid {
        path: "<command line>".into(),
        message,
    };
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| bad(format!("expected --key, found `{arg}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| bad(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parse config text, then apply overrides. Unknown keys are errors.
    pub fn from_str_with(
        text: &str,
        origin: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            path: origin.to_string(),
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        for (k, v) in overrides {
            table.insert(k.clone(), override_value(v));
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        cfg.check().map_err(invalid)?;
        Ok(cfg)
    }

    /// Re-check invariants after programmatic edits.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|message| ConfigError::Invalid {
            path: "<config>".into(),
            message,
        })
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_with(&text, &path.display().to_string(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), String> {
        self.prune_strategy().validate().map_err(|e| e.to_string())?;
        self.model_config().validate().map_err(|e| e.to_string())?;
        self.train_config()
            .validate(self.n_enc_layers)
            .map_err(|e| e.to_string())?;
        if self.interactions.is_some() != self.embeddings.is_some() {
            return Err("`interactions` and `embeddings` must be given together".into());
        }
        Ok(())
    }

    pub fn prune_strategy(&self) -> PruneStrategy {
        PruneStrategy {
            kind: self.strategy,
            rho: self.rho,
            pool_window: self.pool_window,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.synth_users,
            n_items: self.synth_items,
            n_clusters: self.synth_clusters,
            d_feat: self.synth_d_feat,
            seed: self.synth_seed,
            min_history: self.synth_min_history,
            max_history: self.synth_max_history,
            in_cluster: self.synth_in_cluster,
            successor: self.synth_successor,
            sigma: self.synth_sigma,
        }
    }

    /// Index depth: the SID levels plus the optional disambiguation level.
    pub fn depth(&self) -> usize {
        self.levels + usize::from(self.dedup_level)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab_size(self.depth(), self.codebook_size),
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_mlp: self.d_mlp,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            dropout: self.dropout,
            max_seq: self.max_seq,
            target_len: self.depth(),
        }
    }

    pub fn example_mode(&self) -> ExampleMode {
        if self.single_target {
            ExampleMode::SingleTarget
        } else {
            ExampleMode::AllPrefixes
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            strategy: self.prune_strategy(),
            prune_layer: self.prune_layer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            valid_interval: self.valid_interval,
            patience: self.patience,
            seed: self.seed,
            beam: self.beam,
            valid_users: self.valid_users,
            prune_at_eval: self.prune_at_eval,
            eval_batch: self.eval_batch,
            timing_warmup: self.timing_warmup,
            timing_window: self.timing_window,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_win_over_file_values() {
        let ov = parse_overrides(&args("--strategy rastp --rho=0.5 --prune-layer 1")).unwrap();
        let cfg = ExperimentConfig::from_str_with("rho = 0.9\nseed = 7\n", "t", &ov).unwrap();
        assert_eq!(cfg.strategy, StrategyKind::Rastp);
        assert_eq!((cfg.rho, cfg.prune_layer, cfg.seed), (0.5, 1, 7));
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(ExperimentConfig::from_str_with("bogus = 1\n", "t", &[]).is_err());
        assert!(ExperimentConfig::from_str_with("strategy = \"median\"\n", "t", &[]).is_err());
        assert!(ExperimentConfig::from_str_with("prune_layer = 3\n", "t", &[]).is_err());
        assert!(parse_overrides(&args("rho 0.5")).is_err());
        assert!(parse_overrides(&args("--rho")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_str_with(&cfg.to_toml(), "t", &[]).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ExperimentConfig::load(Path::new("/nope/x.toml"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nope/x.toml"));
    }
}
