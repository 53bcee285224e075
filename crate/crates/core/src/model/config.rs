use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dropout: f64,
    /// Longest encoder input, in tokens.
    pub max_seq: usize,
    /// Decoder length: codes per target SID.
    pub target_len: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 64-d model, 4 heads, 256-d MLP, 2 + 2 layers.
    pub fn desk(vocab_size: usize, target_len: usize, max_seq: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            d_mlp: 256,
            n_enc_layers: 2,
            n_dec_layers: 2,
            dropout: 0.15,
            max_seq,
            target_len,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_mlp", self.d_mlp),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("max_seq", self.max_seq),
            ("target_len", self.target_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::desk(98, 3, 120);
        assert!(c.validate().is_ok());
        c.d_model = 128;
        c.n_heads = 6;
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
