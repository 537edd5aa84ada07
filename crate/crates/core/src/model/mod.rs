//! Toy encoder-decoder transformer with shared tied embeddings, language
//! embeddings, the pretraining/translation objectives, beam decoding and
//! checkpointing. All math is f64 and single-threaded so that runs are
//! bitwise reproducible and finite-difference checks are sharp.

mod checkpoint;
mod decode;
mod layers;
mod loss;
mod objectives;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CkptMeta};
pub use decode::{translate, translate_batch};
pub use loss::{forward_mt_loss, mt_loss_only, ModelGrads};
pub use objectives::{
    apply_noise, apply_noise_seeded, mass_mask, mt_batches, mass_batches, noise_batches,
    encoder_batch, MaskCfg, MassExample, NoiseCfg, TargetBatch,
};
pub use train::{grad_check, train_step, AdamState, GradCheckReport, ObjectiveBatch, ObjectiveTag, OptimCfg};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelCfg {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Layer counts may be zero, which degenerates to the purely linear
    /// embedding -> projection path used by sharp gradient checks.
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub max_len: usize,
    pub n_langs: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            d_model: 128,
            n_heads: 4,
            ffn_dim: 512,
            n_enc_layers: 3,
            n_dec_layers: 3,
            max_len: 64,
            n_langs: 4,
            dropout: 0.0,
            vocab_size: 0,
            seed: 1,
        }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model: d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("model: max_len must be >= 2".into()));
        }
        if self.n_langs == 0 {
            return Err(Error::Config("model: n_langs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("model: dropout must be in [0,1)".into()));
        }
        if self.vocab_size < 6 {
            return Err(Error::Config(
                "model: vocab_size must cover the specials plus content".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LnParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncLayerParams {
    pub attn: AttnParams,
    pub ln1: LnParams,
    pub ffn: FfnParams,
    pub ln2: LnParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecLayerParams {
    pub self_attn: AttnParams,
    pub ln1: LnParams,
    pub cross_attn: AttnParams,
    pub ln2: LnParams,
    pub ffn: FfnParams,
    pub ln3: LnParams,
}

/// All trainable parameters. `token_emb` is one storage location shared by
/// the encoder input, the decoder input and the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelCfg,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub lang_emb: Array2<f64>,
    pub out_bias: Array1<f64>,
    pub encoder: Vec<EncLayerParams>,
    pub decoder: Vec<DecLayerParams>,
}

pub enum TensorRef<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    M(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::M(m) => m.len(),
            TensorRef::V(v) => v.len(),
        }
    }

    pub fn get(&self, flat: usize) -> f64 {
        match self {
            TensorRef::M(m) => m.as_slice().expect("contiguous")[flat],
            TensorRef::V(v) => v[flat],
        }
    }
}

fn attn_init(d: usize, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> AttnParams {
    let mut mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| normal.sample(rng));
    AttnParams {
        wq: mat(d, d),
        wk: mat(d, d),
        wv: mat(d, d),
        wo: mat(d, d),
        bq: Array1::zeros(d),
        bk: Array1::zeros(d),
        bv: Array1::zeros(d),
        bo: Array1::zeros(d),
    }
}

fn attn_zeros(d: usize) -> AttnParams {
    AttnParams {
        wq: Array2::zeros((d, d)),
        wk: Array2::zeros((d, d)),
        wv: Array2::zeros((d, d)),
        wo: Array2::zeros((d, d)),
        bq: Array1::zeros(d),
        bk: Array1::zeros(d),
        bv: Array1::zeros(d),
        bo: Array1::zeros(d),
    }
}

fn ln_init(d: usize) -> LnParams {
    LnParams {
        gamma: Array1::ones(d),
        beta: Array1::zeros(d),
    }
}

fn ln_zeros(d: usize) -> LnParams {
    LnParams {
        gamma: Array1::zeros(d),
        beta: Array1::zeros(d),
    }
}

impl ModelParams {
    /// Seeded random initialization: N(0, 0.02) weights, zero biases,
    /// identity layer norms.
    pub fn init(cfg: &ModelCfg) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, c), |_| normal.sample(rng))
        };
        let token_emb = mat(cfg.vocab_size, d, &mut rng);
        let pos_emb = mat(cfg.max_len, d, &mut rng);
        let lang_emb = mat(cfg.n_langs, d, &mut rng);
        let ffn_init = |rng: &mut ChaCha8Rng| FfnParams {
            w1: Array2::from_shape_fn((d, f), |_| normal.sample(rng)),
            b1: Array1::zeros(f),
            w2: Array2::from_shape_fn((f, d), |_| normal.sample(rng)),
            b2: Array1::zeros(d),
        };
        let encoder = (0..cfg.n_enc_layers)
            .map(|_| EncLayerParams {
                attn: attn_init(d, &mut rng, &normal),
                ln1: ln_init(d),
                ffn: ffn_init(&mut rng),
                ln2: ln_init(d),
            })
            .collect();
        let decoder = (0..cfg.n_dec_layers)
            .map(|_| DecLayerParams {
                self_attn: attn_init(d, &mut rng, &normal),
                ln1: ln_init(d),
                cross_attn: attn_init(d, &mut rng, &normal),
                ln2: ln_init(d),
                ffn: ffn_init(&mut rng),
                ln3: ln_init(d),
            })
            .collect();
        Ok(ModelParams {
            cfg: cfg.clone(),
            token_emb,
            pos_emb,
            lang_emb,
            out_bias: Array1::zeros(cfg.vocab_size),
            encoder,
            decoder,
        })
    }

    /// Same shapes, all zeros; used for gradients and optimizer moments.
    pub fn zeros_like(cfg: &ModelCfg) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        let ffn = || FfnParams {
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        };
        ModelParams {
            cfg: cfg.clone(),
            token_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_len, d)),
            lang_emb: Array2::zeros((cfg.n_langs, d)),
            out_bias: Array1::zeros(cfg.vocab_size),
            encoder: (0..cfg.n_enc_layers)
                .map(|_| EncLayerParams {
                    attn: attn_zeros(d),
                    ln1: ln_zeros(d),
                    ffn: ffn(),
                    ln2: ln_zeros(d),
                })
                .collect(),
            decoder: (0..cfg.n_dec_layers)
                .map(|_| DecLayerParams {
                    self_attn: attn_zeros(d),
                    ln1: ln_zeros(d),
                    cross_attn: attn_zeros(d),
                    ln2: ln_zeros(d),
                    ffn: ffn(),
                    ln3: ln_zeros(d),
                })
                .collect(),
        }
    }

    /// Canonical (name, tensor) listing; the order defines the checkpoint
    /// layout and must stay stable.
    pub fn named_tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out: Vec<(String, TensorRef<'_>)> = vec![
            ("token_emb".into(), TensorRef::M(&self.token_emb)),
            ("pos_emb".into(), TensorRef::M(&self.pos_emb)),
            ("lang_emb".into(), TensorRef::M(&self.lang_emb)),
            ("out_bias".into(), TensorRef::V(&self.out_bias)),
        ];
        for (i, l) in self.encoder.iter().enumerate() {
            let p = format!("enc.{}", i);
            push_attn(&mut out, &format!("{}.attn", p), &l.attn);
            push_ln(&mut out, &format!("{}.ln1", p), &l.ln1);
            push_ffn(&mut out, &format!("{}.ffn", p), &l.ffn);
            push_ln(&mut out, &format!("{}.ln2", p), &l.ln2);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            let p = format!("dec.{}", i);
            push_attn(&mut out, &format!("{}.self", p), &l.self_attn);
            push_ln(&mut out, &format!("{}.ln1", p), &l.ln1);
            push_attn(&mut out, &format!("{}.cross", p), &l.cross_attn);
            push_ln(&mut out, &format!("{}.ln2", p), &l.ln2);
            push_ffn(&mut out, &format!("{}.ffn", p), &l.ffn);
            push_ln(&mut out, &format!("{}.ln3", p), &l.ln3);
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out: Vec<(String, TensorMut<'_>)> = vec![
            ("token_emb".into(), TensorMut::M(&mut self.token_emb)),
            ("pos_emb".into(), TensorMut::M(&mut self.pos_emb)),
            ("lang_emb".into(), TensorMut::M(&mut self.lang_emb)),
            ("out_bias".into(), TensorMut::V(&mut self.out_bias)),
        ];
        for (i, l) in self.encoder.iter_mut().enumerate() {
            let p = format!("enc.{}", i);
            push_attn_mut(&mut out, &format!("{}.attn", p), &mut l.attn);
            push_ln_mut(&mut out, &format!("{}.ln1", p), &mut l.ln1);
            push_ffn_mut(&mut out, &format!("{}.ffn", p), &mut l.ffn);
            push_ln_mut(&mut out, &format!("{}.ln2", p), &mut l.ln2);
        }
        for (i, l) in self.decoder.iter_mut().enumerate() {
            let p = format!("dec.{}", i);
            push_attn_mut(&mut out, &format!("{}.self", p), &mut l.self_attn);
            push_ln_mut(&mut out, &format!("{}.ln1", p), &mut l.ln1);
            push_attn_mut(&mut out, &format!("{}.cross", p), &mut l.cross_attn);
            push_ln_mut(&mut out, &format!("{}.ln2", p), &mut l.ln2);
            push_ffn_mut(&mut out, &format!("{}.ffn", p), &mut l.ffn);
            push_ln_mut(&mut out, &format!("{}.ln3", p), &mut l.ln3);
        }
        out
    }

    /// Sum of |x| over every parameter except the named tensors; used to
    /// verify that surgical edits touch nothing else.
    pub fn checksum_excluding(&self, exclude: &[&str]) -> f64 {
        self.named_tensors()
            .iter()
            .filter(|(n, _)| !exclude.contains(&n.as_str()))
            .map(|(_, t)| match t {
                TensorRef::M(m) => m.iter().map(|v| v.abs()).sum::<f64>(),
                TensorRef::V(v) => v.iter().map(|v| v.abs()).sum::<f64>(),
            })
            .sum()
    }
}

fn push_attn<'a>(out: &mut Vec<(String, TensorRef<'a>)>, p: &str, a: &'a AttnParams) {
    out.push((format!("{}.wq", p), TensorRef::M(&a.wq)));
    out.push((format!("{}.wk", p), TensorRef::M(&a.wk)));
    out.push((format!("{}.wv", p), TensorRef::M(&a.wv)));
    out.push((format!("{}.wo", p), TensorRef::M(&a.wo)));
    out.push((format!("{}.bq", p), TensorRef::V(&a.bq)));
    out.push((format!("{}.bk", p), TensorRef::V(&a.bk)));
    out.push((format!("{}.bv", p), TensorRef::V(&a.bv)));
    out.push((format!("{}.bo", p), TensorRef::V(&a.bo)));
}

fn push_attn_mut<'a>(out: &mut Vec<(String, TensorMut<'a>)>, p: &str, a: &'a mut AttnParams) {
    out.push((format!("{}.wq", p), TensorMut::M(&mut a.wq)));
    out.push((format!("{}.wk", p), TensorMut::M(&mut a.wk)));
    out.push((format!("{}.wv", p), TensorMut::M(&mut a.wv)));
    out.push((format!("{}.wo", p), TensorMut::M(&mut a.wo)));
    out.push((format!("{}.bq", p), TensorMut::V(&mut a.bq)));
    out.push((format!("{}.bk", p), TensorMut::V(&mut a.bk)));
    out.push((format!("{}.bv", p), TensorMut::V(&mut a.bv)));
    out.push((format!("{}.bo", p), TensorMut::V(&mut a.bo)));
}

fn push_ffn<'a>(out: &mut Vec<(String, TensorRef<'a>)>, p: &str, f: &'a FfnParams) {
    out.push((format!("{}.w1", p), TensorRef::M(&f.w1)));
    out.push((format!("{}.b1", p), TensorRef::V(&f.b1)));
    out.push((format!("{}.w2", p), TensorRef::M(&f.w2)));
    out.push((format!("{}.b2", p), TensorRef::V(&f.b2)));
}

fn push_ffn_mut<'a>(out: &mut Vec<(String, TensorMut<'a>)>, p: &str, f: &'a mut FfnParams) {
    out.push((format!("{}.w1", p), TensorMut::M(&mut f.w1)));
    out.push((format!("{}.b1", p), TensorMut::V(&mut f.b1)));
    out.push((format!("{}.w2", p), TensorMut::M(&mut f.w2)));
    out.push((format!("{}.b2", p), TensorMut::V(&mut f.b2)));
}

fn push_ln<'a>(out: &mut Vec<(String, TensorRef<'a>)>, p: &str, l: &'a LnParams) {
    out.push((format!("{}.gamma", p), TensorRef::V(&l.gamma)));
    out.push((format!("{}.beta", p), TensorRef::V(&l.beta)));
}

fn push_ln_mut<'a>(out: &mut Vec<(String, TensorMut<'a>)>, p: &str, l: &'a mut LnParams) {
    out.push((format!("{}.gamma", p), TensorMut::V(&mut l.gamma)));
    out.push((format!("{}.beta", p), TensorMut::V(&mut l.beta)));
}

/// One padded batch side: token ids, explicit position ids, per-sequence
/// lengths and language ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Array2<u32>,
    pub positions: Array2<u32>,
    pub lengths: Vec<usize>,
    pub langs: Vec<u32>,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn validate(&self, cfg: &ModelCfg) -> Result<()> {
        if self.tokens.nrows() != self.lengths.len() || self.tokens.nrows() != self.langs.len() {
            return Err(Error::Data("batch: row count mismatch".into()));
        }
        if self.tokens.dim() != self.positions.dim() {
            return Err(Error::Data("batch: positions shape mismatch".into()));
        }
        if self.seq_len() > cfg.max_len {
            return Err(Error::Data(format!(
                "batch: sequence length {} exceeds max_len {}",
                self.seq_len(),
                cfg.max_len
            )));
        }
        for (b, &len) in self.lengths.iter().enumerate() {
            if len == 0 || len > self.seq_len() {
                return Err(Error::Data(format!("batch: bad length {} in row {}", len, b)));
            }
            if self.langs[b] as usize >= cfg.n_langs {
                return Err(Error::Data(format!("batch: language id {} out of range", self.langs[b])));
            }
        }
        for ((_, t), (_, p)) in self
            .tokens
            .indexed_iter()
            .zip(self.positions.indexed_iter())
        {
            if *t as usize >= cfg.vocab_size {
                return Err(Error::Data(format!("batch: token id {} out of range", t)));
            }
            if *p as usize >= cfg.max_len {
                return Err(Error::Data(format!("batch: position {} out of range", p)));
            }
        }
        Ok(())
    }
}
