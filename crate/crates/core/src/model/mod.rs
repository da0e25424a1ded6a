//! A small decoder-only autoregressive transformer in 64-bit arithmetic.
//!
//! Pre-norm blocks with learned positional embeddings, multi-head causal
//! self-attention, a GELU feed-forward and an untied output projection.
//! Parameters live in one flat `Vec<f64>` behind a named-tensor layout, which
//! keeps the optimizer, finite-difference checks and checkpoint serialization
//! trivial. All arithmetic is f64 and all transcendentals go through `libm`,
//! so results are bit-identical across platforms.

mod backward;
mod forward;
pub(crate) mod linalg;

pub use backward::{backward_seq, completion_logprob_with_grad};
pub(crate) use backward::backward_completion;
pub(crate) use forward::masked_logprob_terms;

/// Exposed for the throughput probe only.
#[doc(hidden)]
pub fn bench_matmul(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    linalg::matmul(out, a, b, m, k, n)
}
pub use forward::{
    completion_cross_entropy, completion_logprob, completion_logprob_terms, forward_logits,
    forward_seq, FwdCache,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::loss::LossVariant;
use crate::rng::Rng;

/// Layer-norm variance guard.
pub(crate) const NORM_EPS: f64 = 1e-5;
/// Initialization standard deviation for embeddings and projections.
pub(crate) const INIT_STD: f64 = 0.02;

/// Row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale default: ~0.11M parameters, trains on a CPU in minutes.
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::seq::Vocab::SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    HeadsDoNotDivide { d_model: usize, n_heads: usize },
    ZeroField(&'static str),
    VocabTooSmall { vocab_size: usize, required: usize },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::HeadsDoNotDivide { d_model, n_heads } => {
                write!(f, "d_model {d_model} is not divisible by n_heads {n_heads}")
            }
            ConfigError::ZeroField(name) => write!(f, "model config field {name} must be positive"),
            ConfigError::VocabTooSmall { vocab_size, required } => {
                write!(f, "vocab_size {vocab_size} below the token inventory size {required}")
            }
        }
    }
}

impl core::error::Error for ConfigError {}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (v, name) in [
            (self.d_model, "d_model"),
            (self.n_layers, "n_layers"),
            (self.n_heads, "n_heads"),
            (self.d_ff, "d_ff"),
            (self.max_len, "max_len"),
            (self.vocab_size, "vocab_size"),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField(name));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ConfigError::HeadsDoNotDivide {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        if self.vocab_size < crate::seq::Vocab::SIZE {
            return Err(ConfigError::VocabTooSmall {
                vocab_size: self.vocab_size,
                required: crate::seq::Vocab::SIZE,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    OverLength { len: usize, max: usize },
    NonFinite,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::OverLength { len, max } => {
                write!(f, "sequence of {len} tokens exceeds max_len {max}")
            }
            ModelError::NonFinite => write!(f, "forward pass produced a non-finite value"),
        }
    }
}

impl core::error::Error for ModelError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Embedding or projection weight; init N(0, 0.02^2).
    Weight,
    /// Additive bias; init 0.
    Bias,
    /// Normalization gain; init 1.
    Gain,
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub tok: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub out_w: usize,
    pub total: usize,
}

/// Enumerates the tensor layout for a config: names, shapes and offsets.
pub fn layout(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let (v, d, f, ml) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.max_len);
    let mut specs: Vec<TensorSpec> = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, kind: ParamKind, offset: &mut usize| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec { name, shape, offset: *offset, kind });
        *offset += len;
    };
    push("tok_emb".into(), alloc::vec![v, d], ParamKind::Weight, &mut offset);
    push("pos_emb".into(), alloc::vec![ml, d], ParamKind::Weight, &mut offset);
    for l in 0..cfg.n_layers {
        push(format!("layers.{l}.ln1.gain"), alloc::vec![d], ParamKind::Gain, &mut offset);
        push(format!("layers.{l}.ln1.bias"), alloc::vec![d], ParamKind::Bias, &mut offset);
        for (w, n) in ["wq", "wk", "wv", "wo"].iter().enumerate() {
            let _ = w;
            push(format!("layers.{l}.attn.{n}"), alloc::vec![d, d], ParamKind::Weight, &mut offset);
        }
        push(format!("layers.{l}.ln2.gain"), alloc::vec![d], ParamKind::Gain, &mut offset);
        push(format!("layers.{l}.ln2.bias"), alloc::vec![d], ParamKind::Bias, &mut offset);
        push(format!("layers.{l}.ffn.w1"), alloc::vec![d, f], ParamKind::Weight, &mut offset);
        push(format!("layers.{l}.ffn.b1"), alloc::vec![f], ParamKind::Bias, &mut offset);
        push(format!("layers.{l}.ffn.w2"), alloc::vec![f, d], ParamKind::Weight, &mut offset);
        push(format!("layers.{l}.ffn.b2"), alloc::vec![d], ParamKind::Bias, &mut offset);
    }
    push("ln_f.gain".into(), alloc::vec![d], ParamKind::Gain, &mut offset);
    push("ln_f.bias".into(), alloc::vec![d], ParamKind::Bias, &mut offset);
    push("out_proj.w".into(), alloc::vec![d, v], ParamKind::Weight, &mut offset);
    specs
}

fn offsets(cfg: &ModelConfig) -> Offsets {
    let specs = layout(cfg);
    let find = |name: &str| specs.iter().find(|s| s.name == name).expect("tensor in layout").offset;
    let layers = (0..cfg.n_layers)
        .map(|l| LayerOffsets {
            ln1_g: find(&format!("layers.{l}.ln1.gain")),
            ln1_b: find(&format!("layers.{l}.ln1.bias")),
            wq: find(&format!("layers.{l}.attn.wq")),
            wk: find(&format!("layers.{l}.attn.wk")),
            wv: find(&format!("layers.{l}.attn.wv")),
            wo: find(&format!("layers.{l}.attn.wo")),
            ln2_g: find(&format!("layers.{l}.ln2.gain")),
            ln2_b: find(&format!("layers.{l}.ln2.bias")),
            w1: find(&format!("layers.{l}.ffn.w1")),
            b1: find(&format!("layers.{l}.ffn.b1")),
            w2: find(&format!("layers.{l}.ffn.w2")),
            b2: find(&format!("layers.{l}.ffn.b2")),
        })
        .collect();
    Offsets {
        tok: find("tok_emb"),
        pos: find("pos_emb"),
        layers,
        lnf_g: find("ln_f.gain"),
        lnf_b: find("ln_f.bias"),
        out_w: find("out_proj.w"),
        total: specs.iter().map(|s| s.len()).sum(),
    }
}

/// Model parameters: a flat f64 vector plus its layout.
#[derive(Debug, Clone)]
pub struct Parameters {
    cfg: ModelConfig,
    off: Offsets,
    data: Vec<f64>,
}

impl Parameters {
    /// Deterministic initialization from `cfg.seed`: N(0, 0.02^2) for weights,
    /// zeros for biases, ones for gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let specs = layout(cfg);
        let total: usize = specs.iter().map(|s| s.len()).sum();
        let mut data = alloc::vec![0.0; total];
        let mut rng = Rng::derive(cfg.seed, 0x6d6f_64656c); // "model"
        for spec in &specs {
            let slice = &mut data[spec.offset..spec.offset + spec.len()];
            match spec.kind {
                ParamKind::Weight => {
                    for x in slice {
                        *x = rng.normal() * INIT_STD;
                    }
                }
                ParamKind::Bias => {}
                ParamKind::Gain => slice.fill(1.0),
            }
        }
        Ok(Parameters { cfg: *cfg, off: offsets(cfg), data })
    }

    /// Rebuilds parameters from a flat vector, e.g. loaded from a checkpoint.
    pub fn from_flat(cfg: &ModelConfig, data: Vec<f64>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let off = offsets(cfg);
        assert_eq!(data.len(), off.total, "flat parameter length mismatch");
        Ok(Parameters { cfg: *cfg, off, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn off(&self) -> &Offsets {
        &self.off
    }

    /// Named view of one tensor.
    pub fn tensor(&self, name: &str) -> Option<(&[f64], Vec<usize>)> {
        layout(&self.cfg)
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| (&self.data[s.offset..s.offset + s.len()], s.shape))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Training phase recorded in checkpoint provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrained,
    FineTuned,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Pretrained => write!(f, "pretrained"),
            Phase::FineTuned => write!(f, "fine-tuned"),
        }
    }
}

/// Where a checkpoint came from; `validation_loss` is the value that
/// justified retaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub phase: Phase,
    pub loss_variant: Option<LossVariant>,
    pub beta: Option<f64>,
    /// Linear-decay schedule: initial rate and total optimizer steps.
    pub lr0: f64,
    pub total_steps: usize,
    pub epochs: usize,
    /// Optimizer step at which this checkpoint was captured.
    pub step: usize,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    pub provenance: Provenance,
}
