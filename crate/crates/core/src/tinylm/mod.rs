//! Minimal decoder-only transformer with a training loop, seeded sampling,
//! injectable prefix embeddings, and an intervention interface exposing
//! every residual write point.

pub mod generate;
pub mod io;
pub mod math;
pub mod model;
pub mod tokenizer;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate, perplexity, GenerationConfig, GenerationRecord};
pub use model::{forward, PosInput, Session};
pub use tokenizer::{build_tokenizer, Vocab};
pub use train::{
    batch_loss, batch_loss_f64, loss_and_grads, loss_and_grads_f64, train, Grads, TrainOptions,
};

/// Model hyperparameters. The hidden state has `d_model` dimensions and the
/// network has `n_layers` transformer blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.vocab_size == 0
        {
            return Err(Error::InvalidConfig("all dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq < 2 {
            return Err(Error::InvalidConfig("max_seq must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of residual write points: embedding output plus two per layer.
    pub fn n_hook_points(&self) -> usize {
        1 + 2 * self.n_layers
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 0, // set from the tokenizer
            max_seq: 320,
            seed: 0,
        }
    }
}

/// A residual write point: the embedding output or the residual stream
/// right after a layer's attention or MLP contribution is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HookPoint {
    EmbedOut,
    PostAttn(usize),
    PostMlp(usize),
}

impl HookPoint {
    /// All hook points of a model, in forward order.
    pub fn all(config: &ModelConfig) -> Vec<HookPoint> {
        let mut v = Vec::with_capacity(config.n_hook_points());
        v.push(HookPoint::EmbedOut);
        for l in 0..config.n_layers {
            v.push(HookPoint::PostAttn(l));
            v.push(HookPoint::PostMlp(l));
        }
        v
    }

    /// Dense index in forward order, for bitmask-style lookups.
    pub fn index(&self) -> usize {
        match self {
            HookPoint::EmbedOut => 0,
            HookPoint::PostAttn(l) => 1 + 2 * l,
            HookPoint::PostMlp(l) => 2 + 2 * l,
        }
    }

    pub fn layer(&self) -> Option<usize> {
        match self {
            HookPoint::EmbedOut => None,
            HookPoint::PostAttn(l) | HookPoint::PostMlp(l) => Some(*l),
        }
    }

    pub fn valid_for(&self, config: &ModelConfig) -> bool {
        match self.layer() {
            None => true,
            Some(l) => l < config.n_layers,
        }
    }
}

impl fmt::Display for HookPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HookPoint::EmbedOut => write!(f, "embed_out"),
            HookPoint::PostAttn(l) => write!(f, "post_attn.{l}"),
            HookPoint::PostMlp(l) => write!(f, "post_mlp.{l}"),
        }
    }
}

impl FromStr for HookPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "embed_out" {
            return Ok(HookPoint::EmbedOut);
        }
        let parse_layer = |rest: &str| -> Result<usize> {
            rest.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad hook point `{s}`")))
        };
        if let Some(rest) = s.strip_prefix("post_attn.") {
            return Ok(HookPoint::PostAttn(parse_layer(rest)?));
        }
        if let Some(rest) = s.strip_prefix("post_mlp.") {
            return Ok(HookPoint::PostMlp(parse_layer(rest)?));
        }
        Err(Error::InvalidConfig(format!("bad hook point `{s}`")))
    }
}

impl Serialize for HookPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for HookPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Residual-stream snapshots for one forward pass: one `d_model` vector per
/// hook point per position, recorded after any intervention was applied.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub hooks: Vec<HookPoint>,
    /// Indexed `[hook][position]`.
    pub residuals: Vec<Vec<Vec<f32>>>,
    pub prompt_len: usize,
    pub seq_len: usize,
}

impl ForwardTrace {
    pub fn residual(&self, hook: HookPoint, pos: usize) -> Option<&[f32]> {
        let idx = hook.index();
        self.residuals
            .get(idx)
            .and_then(|per_pos| per_pos.get(pos))
            .map(Vec::as_slice)
    }

    /// Total number of recorded vectors; `(1 + 2L) * seq_len` when complete.
    pub fn vector_count(&self) -> usize {
        self.residuals.iter().map(Vec::len).sum()
    }
}

/// One transformer block's parameters. Projections are row-major `[out, in]`.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1_g: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ln2_g: Vec<f32>,
    pub w1: Vec<f32>,
    pub w2: Vec<f32>,
}

/// Full parameter set. Immutable after training or loading; positions use a
/// fixed sinusoidal table so no positional parameters appear here.
#[derive(Debug, Clone)]
pub struct Weights {
    pub config: ModelConfig,
    pub wte: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Vec<f32>,
    pub wun: Vec<f32>,
}

impl Weights {
    /// Seeded Gaussian initialization (std 0.02, gains at 1).
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid stddev");
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        let d = config.d_model;
        let wte = draw(config.vocab_size * d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_g: vec![1.0; d],
                wq: draw(d * d),
                wk: draw(d * d),
                wv: draw(d * d),
                wo: draw(d * d),
                ln2_g: vec![1.0; d],
                w1: draw(config.d_ff * d),
                w2: draw(d * config.d_ff),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            wte,
            layers,
            lnf_g: vec![1.0; d],
            wun: draw(config.vocab_size * d),
        })
    }

    pub fn embedding_row(&self, token: u32) -> &[f32] {
        let d = self.config.d_model;
        let i = token as usize;
        &self.wte[i * d..(i + 1) * d]
    }

    /// Named parameter blocks in the documented serialization order.
    pub fn block_names(config: &ModelConfig) -> Vec<String> {
        let mut names = vec!["wte".to_string()];
        for l in 0..config.n_layers {
            for part in ["ln1_g", "wq", "wk", "wv", "wo", "ln2_g", "w1", "w2"] {
                names.push(format!("layer{l}.{part}"));
            }
        }
        names.push("lnf_g".to_string());
        names.push("wun".to_string());
        names
    }

    pub fn blocks(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = vec![&self.wte];
        for layer in &self.layers {
            v.push(&layer.ln1_g);
            v.push(&layer.wq);
            v.push(&layer.wk);
            v.push(&layer.wv);
            v.push(&layer.wo);
            v.push(&layer.ln2_g);
            v.push(&layer.w1);
            v.push(&layer.w2);
        }
        v.push(&self.lnf_g);
        v.push(&self.wun);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut v: Vec<&mut Vec<f32>> = vec![&mut self.wte];
        for layer in &mut self.layers {
            v.push(&mut layer.ln1_g);
            v.push(&mut layer.wq);
            v.push(&mut layer.wk);
            v.push(&mut layer.wv);
            v.push(&mut layer.wo);
            v.push(&mut layer.ln2_g);
            v.push(&mut layer.w1);
            v.push(&mut layer.w2);
        }
        v.push(&mut self.lnf_g);
        v.push(&mut self.wun);
        v
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, block) in Self::block_names(&self.config).iter().zip(self.blocks()) {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::WeightFile(format!("non-finite value in {name}")));
            }
        }
        Ok(())
    }

    /// Content hash over config and parameters, hex-encoded SHA-256.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(io::config_bytes(&self.config));
        for block in self.blocks() {
            for v in block {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 11,
            max_seq: 16,
            seed: 7,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut bad = cfg();
        bad.n_heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.max_seq = 1;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.d_ff = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hook_points_enumerate_in_order() {
        let hooks = HookPoint::all(&cfg());
        assert_eq!(hooks.len(), 5);
        for (i, h) in hooks.iter().enumerate() {
            assert_eq!(h.index(), i);
        }
        assert_eq!(hooks[0], HookPoint::EmbedOut);
        assert_eq!(hooks[3], HookPoint::PostAttn(1));
    }

    #[test]
    fn hook_point_string_round_trip() {
        for h in HookPoint::all(&cfg()) {
            let s = h.to_string();
            assert_eq!(s.parse::<HookPoint>().unwrap(), h);
        }
        assert!("post_gelu.1".parse::<HookPoint>().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Weights::init(&cfg()).unwrap();
        let b = Weights::init(&cfg()).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks().iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn block_names_align_with_blocks() {
        let w = Weights::init(&cfg()).unwrap();
        assert_eq!(Weights::block_names(&w.config).len(), w.blocks().len());
    }
}
