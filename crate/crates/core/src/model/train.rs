//! One-step training (summed objective losses, single Adam update) and the
//! finite-difference gradient harness.

use super::loss::{forward_mt_loss, mt_loss_only, ModelGrads};
use super::objectives::TargetBatch;
use super::{Batch, ModelParams, TensorMut, TensorRef};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OptimCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
}

impl Default for OptimCfg {
    fn default() -> Self {
        OptimCfg {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            warmup_steps: 1000,
        }
    }
}

/// Adam moments, shaped like the parameters.
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(cfg: &super::ModelCfg) -> Self {
        AdamState {
            m: ModelParams::zeros_like(cfg),
            v: ModelParams::zeros_like(cfg),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveTag {
    /// Masked-fragment reconstruction.
    Ma,
    /// Supervised translation.
    Mt,
    /// Denoising auto-encoding.
    Ae,
    /// Supervised step on online back-translated data.
    Bt,
    /// Supervised step on pivoted (cross-lingual) back-translated data.
    Xbt,
}

impl std::fmt::Display for ObjectiveTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ObjectiveTag::Ma => "MA",
            ObjectiveTag::Mt => "MT",
            ObjectiveTag::Ae => "AE",
            ObjectiveTag::Bt => "BT",
            ObjectiveTag::Xbt => "XBT",
        };
        f.write_str(s)
    }
}

pub struct ObjectiveBatch {
    pub tag: ObjectiveTag,
    pub src: Batch,
    pub tgt: TargetBatch,
}

fn slice_of<'a>(t: &'a TensorRef<'a>) -> &'a [f64] {
    match t {
        TensorRef::M(m) => m.as_slice().expect("standard layout"),
        TensorRef::V(v) => v.as_slice().expect("standard layout"),
    }
}

fn slice_of_mut<'a>(t: &'a mut TensorMut<'_>) -> &'a mut [f64] {
    match t {
        TensorMut::M(m) => m.as_slice_mut().expect("standard layout"),
        TensorMut::V(v) => v.as_slice_mut().expect("standard layout"),
    }
}

/// Sums the losses of all objective batches, takes one Adam update, and
/// returns the per-objective losses. A non-finite loss aborts with a
/// diagnostic before any parameter is touched.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    batches: &[ObjectiveBatch],
    optim: &OptimCfg,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<(ObjectiveTag, f64)>> {
    if batches.is_empty() {
        return Err(Error::Config("train_step: no objective batches".into()));
    }
    let mut grads = ModelGrads::zeros_like(&params.cfg);
    let mut losses = Vec::with_capacity(batches.len());
    for ob in batches {
        let (loss, g) = forward_mt_loss(params, &ob.src, &ob.tgt, rng.as_deref_mut())?;
        if !loss.is_finite() {
            return Err(Error::TrainingAbort(format!(
                "{} loss became {} at step {}",
                ob.tag,
                loss,
                state.t + 1
            )));
        }
        accumulate(&mut grads, &g);
        losses.push((ob.tag, loss));
    }

    state.t += 1;
    let warm = if optim.warmup_steps == 0 {
        1.0
    } else {
        (state.t as f64 / optim.warmup_steps as f64).min(1.0)
    };
    let lr_t = optim.lr * warm;
    let bc1 = 1.0 - optim.beta1.powi(state.t as i32);
    let bc2 = 1.0 - optim.beta2.powi(state.t as i32);

    let mut p = params.named_tensors_mut();
    let g = grads.named_tensors();
    let mut m = state.m.named_tensors_mut();
    let mut v = state.v.named_tensors_mut();
    for i in 0..p.len() {
        let ps = slice_of_mut(&mut p[i].1);
        let gs = slice_of(&g[i].1);
        let ms = slice_of_mut(&mut m[i].1);
        let vs = slice_of_mut(&mut v[i].1);
        for j in 0..ps.len() {
            ms[j] = optim.beta1 * ms[j] + (1.0 - optim.beta1) * gs[j];
            vs[j] = optim.beta2 * vs[j] + (1.0 - optim.beta2) * gs[j] * gs[j];
            let mhat = ms[j] / bc1;
            let vhat = vs[j] / bc2;
            ps[j] -= lr_t * mhat / (vhat.sqrt() + optim.eps);
        }
    }
    Ok(losses)
}

fn accumulate(into: &mut ModelGrads, from: &ModelGrads) {
    let mut a = into.named_tensors_mut();
    let b = from.named_tensors();
    for i in 0..a.len() {
        let xs = slice_of_mut(&mut a[i].1);
        let ys = slice_of(&b[i].1);
        for j in 0..xs.len() {
            xs[j] += ys[j];
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst coordinate: (tensor name, flat index, analytic, finite-diff).
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Central finite differences against the analytic gradients on sampled
/// coordinates of every tensor. Requires dropout 0 so both paths evaluate
/// the same deterministic loss.
pub fn grad_check(
    params: &ModelParams,
    src: &Batch,
    tgt: &TargetBatch,
    epsilon: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if params.cfg.dropout != 0.0 {
        return Err(Error::Config("grad_check: requires dropout 0".into()));
    }
    let (_, grads) = forward_mt_loss(params, src, tgt, None)?;
    let g_named = grads.named_tensors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (ti, (name, tensor)) in g_named.iter().enumerate() {
        let len = tensor.len();
        if len == 0 {
            continue;
        }
        let n = samples_per_tensor.min(len);
        for _ in 0..n {
            let ci = rng.gen_range(0..len);
            let analytic = tensor.get(ci);
            let fd = {
                let mut plus = params.clone();
                slice_of_mut(&mut plus.named_tensors_mut()[ti].1)[ci] += epsilon;
                let lp = mt_loss_only(&plus, src, tgt)?;
                let mut minus = params.clone();
                slice_of_mut(&mut minus.named_tensors_mut()[ti].1)[ci] -= epsilon;
                let lm = mt_loss_only(&minus, src, tgt)?;
                (lp - lm) / (2.0 * epsilon)
            };
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), ci, analytic, fd));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objectives::{mass_batches, mt_batches, noise_batches, MaskCfg, NoiseCfg};
    use crate::model::ModelCfg;

    fn tiny_cfg() -> ModelCfg {
        ModelCfg {
            d_model: 16,
            n_heads: 2,
            ffn_dim: 24,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 16,
            n_langs: 2,
            dropout: 0.0,
            vocab_size: 20,
            seed: 3,
        }
    }

    fn toy_pairs() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        (
            vec![vec![5, 6, 7, 8], vec![9, 10, 11]],
            vec![vec![12, 13, 14], vec![15, 16, 17, 18]],
        )
    }

    #[test]
    fn zero_lr_keeps_params_bitwise() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(&cfg);
        let (src, tgt) = toy_pairs();
        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let optim = OptimCfg { lr: 0.0, ..OptimCfg::default() };
        train_step(
            &mut params,
            &mut state,
            &[ObjectiveBatch { tag: ObjectiveTag::Mt, src: sb, tgt: tb }],
            &optim,
            None,
        )
        .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn loss_decreases_when_overfitting_one_batch() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let mut state = AdamState::new(&cfg);
        let (src, tgt) = toy_pairs();
        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let optim = OptimCfg { lr: 1e-3, warmup_steps: 1, ..OptimCfg::default() };
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let losses = train_step(
                &mut params,
                &mut state,
                &[ObjectiveBatch {
                    tag: ObjectiveTag::Mt,
                    src: sb.clone(),
                    tgt: tb.clone(),
                }],
                &optim,
                None,
            )
            .unwrap();
            let l = losses[0].1;
            assert!(l < last, "loss did not decrease: {} -> {}", last, l);
            last = l;
        }
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let cfg = tiny_cfg();
        let run = || {
            let mut params = ModelParams::init(&cfg).unwrap();
            let mut state = AdamState::new(&cfg);
            let (src, tgt) = toy_pairs();
            let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
            let optim = OptimCfg { warmup_steps: 2, ..OptimCfg::default() };
            for _ in 0..5 {
                train_step(
                    &mut params,
                    &mut state,
                    &[ObjectiveBatch {
                        tag: ObjectiveTag::Mt,
                        src: sb.clone(),
                        tgt: tb.clone(),
                    }],
                    &optim,
                    None,
                )
                .unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn grad_check_full_model_all_objectives() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (src, tgt) = toy_pairs();

        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let r = grad_check(&params, &sb, &tb, 1e-5, 3, 11).unwrap();
        assert!(r.max_rel_error < 1e-4, "MT: {:?}", r.worst);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (sb, tb) = mass_batches(&src, 0, &MaskCfg::default(), &cfg, &mut rng).unwrap();
        let r = grad_check(&params, &sb, &tb, 1e-5, 3, 12).unwrap();
        assert!(r.max_rel_error < 1e-4, "MASS: {:?}", r.worst);

        let (sb, tb) = noise_batches(&src, 1, &NoiseCfg::default(), &cfg, &mut rng).unwrap();
        let r = grad_check(&params, &sb, &tb, 1e-5, 3, 13).unwrap();
        assert!(r.max_rel_error < 1e-4, "AE: {:?}", r.worst);
    }

    #[test]
    fn grad_check_linear_path_is_sharp() {
        // zero layers: embeddings -> tied projection only
        let cfg = ModelCfg {
            n_enc_layers: 0,
            n_dec_layers: 0,
            ..tiny_cfg()
        };
        let params = ModelParams::init(&cfg).unwrap();
        let (src, tgt) = toy_pairs();
        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let r = grad_check(&params, &sb, &tb, 1e-6, 8, 21).unwrap();
        assert!(r.max_rel_error < 1e-8, "linear: {:?}", r.worst);
    }

    #[test]
    fn unused_vocab_row_has_zero_grad_on_both_sides() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (src, tgt) = toy_pairs();
        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let (_, grads) = forward_mt_loss(&params, &sb, &tb, None).unwrap();
        // token 19 never appears in any batch; its embedding row only feeds
        // the softmax denominator through the projection, which does get
        // gradient -- but the POSITION embedding row beyond all sequence
        // lengths is fully unused.
        let unused_pos = cfg.max_len - 1;
        for d in 0..cfg.d_model {
            assert_eq!(grads.pos_emb[[unused_pos, d]], 0.0);
        }
        let mut plus = params.clone();
        plus.pos_emb[[unused_pos, 0]] += 1e-4;
        let l0 = mt_loss_only(&params, &sb, &tb).unwrap();
        let l1 = mt_loss_only(&plus, &sb, &tb).unwrap();
        assert_eq!(l0, l1);
    }
}
