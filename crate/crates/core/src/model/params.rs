//! Flat parameter storage and the named layout over it.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Scalar;

const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub off: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(self) -> Range<usize> {
        self.off..self.off + self.len
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: Slot,
    pub bias: Slot,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: Slot,
    pub b: Slot,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub q: Linear,
    pub kv: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Mlp {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: Norm,
    pub attn: Attn,
    pub ln2: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: Norm,
    pub self_attn: Attn,
    pub ln2: Norm,
    pub cross: Attn,
    pub ln3: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub enc_tok: Slot,
    pub enc_pos: Slot,
    pub enc: Vec<EncLayer>,
    pub mem_norm: Norm,
    pub dec_tok: Slot,
    pub dec_pos: Slot,
    pub dec: Vec<DecLayer>,
    pub out_norm: Norm,
    pub head: Linear,
    pub groups: Vec<(String, Slot, Init)>,
    pub total: usize,
}

struct Builder {
    groups: Vec<(String, Slot, Init)>,
    total: usize,
}

impl Builder {
    fn slot(&mut self, name: String, len: usize, init: Init) -> Slot {
        let s = Slot {
            off: self.total,
            len,
        };
        self.total += len;
        self.groups.push((name, s, init));
        s
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.slot(format!("{name}.gain"), d, Init::Ones),
            bias: self.slot(format!("{name}.bias"), d, Init::Zeros),
        }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let std = 1.0 / (din as f64).sqrt();
        Linear {
            w: self.slot(format!("{name}.w"), din * dout, Init::Normal(std)),
            b: self.slot(format!("{name}.b"), dout, Init::Zeros),
            din,
            dout,
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            kv: self.linear(&format!("{name}.kv"), d, 2 * d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, m: usize) -> Mlp {
        Mlp {
            up: self.linear(&format!("{name}.up"), d, m),
            down: self.linear(&format!("{name}.down"), m, d),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut b = Builder {
            groups: Vec::new(),
            total: 0,
        };
        let enc_tok = b.slot("enc.tok".into(), c.vocab_size * d, Init::Normal(1.0));
        let enc_pos = b.slot("enc.pos".into(), c.max_seq * d, Init::Normal(0.5));
        let enc = (0..c.n_enc_layers)
            .map(|l| EncLayer {
                ln1: b.norm(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln2: b.norm(&format!("enc.{l}.ln2"), d),
                mlp: b.mlp(&format!("enc.{l}.mlp"), d, c.d_mlp),
            })
            .collect();
        let mem_norm = b.norm("enc.final_ln", d);
        let dec_tok = b.slot("dec.tok".into(), c.vocab_size * d, Init::Normal(1.0));
        let dec_pos = b.slot("dec.pos".into(), c.target_len * d, Init::Normal(0.5));
        let dec = (0..c.n_dec_layers)
            .map(|l| DecLayer {
                ln1: b.norm(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self"), d),
                ln2: b.norm(&format!("dec.{l}.ln2"), d),
                cross: b.attn(&format!("dec.{l}.cross"), d),
                ln3: b.norm(&format!("dec.{l}.ln3"), d),
                mlp: b.mlp(&format!("dec.{l}.mlp"), d, c.d_mlp),
            })
            .collect();
        let out_norm = b.norm("dec.final_ln", d);
        let head = b.linear("head", d, c.vocab_size);
        Layout {
            enc_tok,
            enc_pos,
            enc,
            mem_norm,
            dec_tok,
            dec_pos,
            dec,
            out_norm,
            head,
            groups: b.groups,
            total: b.total,
        }
    }
}

/// Encoder–decoder parameters over the SID vocabulary.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T> {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) w: Vec<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![T::zero(); layout.total];
        for (_, slot, init) in &layout.groups {
            let dst = &mut w[slot.range()];
            match *init {
                Init::Zeros => {}
                Init::Ones => dst.fill(T::one()),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    for x in dst {
                        *x = T::cast(dist.sample(&mut rng));
                    }
                }
            }
        }
        Ok(Seq2Seq { config, layout, w })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.w
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.w
    }

    pub fn num_params(&self) -> usize {
        self.w.len()
    }

    /// Named parameter groups as `(name, flat range)`.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        self.layout
            .groups
            .iter()
            .map(|(n, s, _)| (n.clone(), s.range()))
            .collect()
    }

    /// Change the dropout rate without touching weights.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.dropout = p;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Zero the output projection so every position predicts uniformly.
    pub fn zero_head(&mut self) {
        let h = self.layout.head;
        self.w[h.w.range()].fill(T::zero());
        self.w[h.b.range()].fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Seq2Seq<U> {
        Seq2Seq {
            config: self.config.clone(),
            layout: self.layout.clone(),
            w: self.w.iter().map(|&x| U::cast(x.as_f64())).collect(),
        }
    }

    pub(crate) fn p(&self, s: Slot) -> &[T] {
        &self.w[s.range()]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    step: usize,
    seed: u64,
    n_params: usize,
}

/// Checkpoint contents besides the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub step: usize,
    pub seed: u64,
}

impl Seq2Seq<f32> {
    pub fn checkpoint_bytes(&self, meta: CheckpointMeta) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&CheckpointManifest {
            config: self.config.clone(),
            step: meta.step,
            seed: meta.seed,
            n_params: self.w.len(),
        })?;
        let mut out = Vec::with_capacity(5 + manifest.len() + self.w.len() * 4);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for x in &self.w {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, meta: CheckpointMeta) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.checkpoint_bytes(meta)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let (&version, rest) = bytes.split_first().ok_or_else(|| bad("empty file"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        if rest.len() < 4 {
            return Err(bad("truncated header"));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated manifest"));
        }
        let m: CheckpointManifest =
            serde_json::from_slice(&rest[..len]).map_err(|e| bad(&e.to_string()))?;
        m.config.validate()?;
        let layout = Layout::new(&m.config);
        let payload = &rest[len..];
        if m.n_params != layout.total || payload.len() != layout.total * 4 {
            return Err(bad("parameter payload does not match config"));
        }
        let w = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((
            Seq2Seq {
                config: m.config,
                layout,
                w,
            },
            CheckpointMeta {
                step: m.step,
                seed: m.seed,
            },
        ))
    }
}
