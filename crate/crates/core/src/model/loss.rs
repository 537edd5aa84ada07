//! Full encoder-decoder forward pass, token-level cross-entropy and the
//! matching manual backward pass.

use super::layers::{
    attention, attention_backward, cross_bias, ffn, ffn_backward, key_padding_bias, layer_norm,
    layer_norm_backward, AttnCache, AttnShape, FfnCache, LnCache,
};
use super::objectives::TargetBatch;
use super::{Batch, ModelParams};
use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

/// Gradients share the parameter layout exactly.
pub type ModelGrads = ModelParams;

pub(crate) struct EncLayerCache {
    x: Array2<f64>,
    attn: AttnCache,
    ln1: LnCache,
    ffn: FfnCache,
    ln2: LnCache,
}

pub(crate) struct DecLayerCache {
    x: Array2<f64>,
    self_attn: AttnCache,
    ln1: LnCache,
    n1: Array2<f64>,
    cross_attn: AttnCache,
    ln2: LnCache,
    ffn: FfnCache,
    ln3: LnCache,
}

pub(crate) struct FullCache {
    pub enc_layers: Vec<EncLayerCache>,
    pub enc_out: Array2<f64>,
    pub dec_layers: Vec<DecLayerCache>,
    pub dec_out: Array2<f64>,
    /// Row-softmax of the output logits.
    pub out_probs: Array2<f64>,
    /// Which decoder rows count toward the loss.
    pub counted: Vec<bool>,
    pub n_counted: usize,
}

fn embed(params: &ModelParams, batch: &Batch) -> Array2<f64> {
    let (bsz, t) = batch.tokens.dim();
    let d = params.cfg.d_model;
    let mut x = Array2::zeros((bsz * t, d));
    for b in 0..bsz {
        let lang = batch.langs[b] as usize;
        for i in 0..t {
            let tok = batch.tokens[[b, i]] as usize;
            let pos = batch.positions[[b, i]] as usize;
            let mut row = x.row_mut(b * t + i);
            row += &params.token_emb.row(tok);
            row += &params.pos_emb.row(pos);
            row += &params.lang_emb.row(lang);
        }
    }
    x
}

fn embed_backward(grads: &mut ModelGrads, batch: &Batch, dx: &Array2<f64>) {
    let (bsz, t) = batch.tokens.dim();
    for b in 0..bsz {
        let lang = batch.langs[b] as usize;
        for i in 0..t {
            let tok = batch.tokens[[b, i]] as usize;
            let pos = batch.positions[[b, i]] as usize;
            let row = dx.row(b * t + i);
            let mut g = grads.token_emb.row_mut(tok);
            g += &row;
            let mut g = grads.pos_emb.row_mut(pos);
            g += &row;
            let mut g = grads.lang_emb.row_mut(lang);
            g += &row;
        }
    }
}

pub(crate) fn forward_encoder(
    params: &ModelParams,
    src: &Batch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, Vec<EncLayerCache>) {
    let cfg = &params.cfg;
    let shape = AttnShape {
        batch: src.batch_size(),
        t_q: src.seq_len(),
        t_k: src.seq_len(),
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let bias = key_padding_bias(&src.lengths, src.seq_len(), src.seq_len(), false);
    let mut x = embed(params, src);
    let mut caches = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (a, attn_cache) = attention(
            &x,
            &x,
            &layer.attn,
            &bias,
            &shape,
            cfg.dropout,
            rng.as_deref_mut(),
        );
        let r1 = &x + &a;
        let (n1, ln1) = layer_norm(&r1, &layer.ln1);
        let (f, ffn_cache) = ffn(&n1, &layer.ffn, cfg.dropout, rng.as_deref_mut());
        let r2 = &n1 + &f;
        let (y, ln2) = layer_norm(&r2, &layer.ln2);
        caches.push(EncLayerCache {
            x,
            attn: attn_cache,
            ln1,
            ffn: ffn_cache,
            ln2,
        });
        x = y;
    }
    (x, caches)
}

pub(crate) fn forward_decoder(
    params: &ModelParams,
    enc_out: &Array2<f64>,
    src_lengths: &[usize],
    tgt_in: &Batch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, Vec<DecLayerCache>) {
    let cfg = &params.cfg;
    let t_t = tgt_in.seq_len();
    let t_s = enc_out.nrows() / tgt_in.batch_size();
    let self_shape = AttnShape {
        batch: tgt_in.batch_size(),
        t_q: t_t,
        t_k: t_t,
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let cross_shape = AttnShape {
        batch: tgt_in.batch_size(),
        t_q: t_t,
        t_k: t_s,
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let self_bias = key_padding_bias(&tgt_in.lengths, t_t, t_t, true);
    let x_bias = cross_bias(src_lengths, t_t, t_s);

    let mut x = embed(params, tgt_in);
    let mut caches = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (a, self_cache) = attention(
            &x,
            &x,
            &layer.self_attn,
            &self_bias,
            &self_shape,
            cfg.dropout,
            rng.as_deref_mut(),
        );
        let r1 = &x + &a;
        let (n1, ln1) = layer_norm(&r1, &layer.ln1);
        let (c, cross_cache) = attention(
            &n1,
            enc_out,
            &layer.cross_attn,
            &x_bias,
            &cross_shape,
            cfg.dropout,
            rng.as_deref_mut(),
        );
        let r2 = &n1 + &c;
        let (n2, ln2) = layer_norm(&r2, &layer.ln2);
        let (f, ffn_cache) = ffn(&n2, &layer.ffn, cfg.dropout, rng.as_deref_mut());
        let r3 = &n2 + &f;
        let (y, ln3) = layer_norm(&r3, &layer.ln3);
        caches.push(DecLayerCache {
            x,
            self_attn: self_cache,
            ln1,
            n1,
            cross_attn: cross_cache,
            ln2,
            ffn: ffn_cache,
            ln3,
        });
        x = y;
    }
    (x, caches)
}

/// Output logits for decoder states: tied projection through the token
/// embedding plus the output bias.
pub(crate) fn output_logits(params: &ModelParams, dec_out: &Array2<f64>) -> Array2<f64> {
    let mut logits = dec_out.dot(&params.token_emb.t());
    logits += &params.out_bias;
    logits
}

pub(crate) fn forward_full(
    params: &ModelParams,
    src: &Batch,
    tgt: &TargetBatch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, FullCache)> {
    src.validate(&params.cfg)?;
    tgt.validate(&params.cfg)?;
    if src.batch_size() != tgt.input.batch_size() {
        return Err(Error::Data("mt loss: src/tgt batch size mismatch".into()));
    }
    let (enc_out, enc_layers) = forward_encoder(params, src, rng.as_deref_mut());
    let (dec_out, dec_layers) =
        forward_decoder(params, &enc_out, &src.lengths, &tgt.input, rng.as_deref_mut());

    let t_t = tgt.input.seq_len();
    let counted: Vec<bool> = (0..dec_out.nrows())
        .map(|row| (row % t_t) < tgt.input.lengths[row / t_t])
        .collect();
    let n_counted = counted.iter().filter(|&&c| c).count();
    if n_counted == 0 {
        return Err(Error::Data("mt loss: no unpadded target positions".into()));
    }

    let mut out_probs = output_logits(params, &dec_out);
    let mut loss = 0.0;
    // log-softmax per counted row, then normalize probabilities in place
    for (row, &count) in counted.iter().enumerate() {
        let mut r = out_probs.row_mut(row);
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
        if count {
            let b = row / t_t;
            let t = row % t_t;
            let target = tgt.targets[[b, t]] as usize;
            loss -= (r[target].max(1e-300)).ln();
        }
    }
    loss /= n_counted as f64;

    Ok((
        loss,
        FullCache {
            enc_layers,
            enc_out,
            dec_layers,
            dec_out,
            out_probs,
            counted,
            n_counted,
        },
    ))
}

pub(crate) fn backward_full(
    params: &ModelParams,
    src: &Batch,
    tgt: &TargetBatch,
    cache: &FullCache,
    grads: &mut ModelGrads,
) {
    let t_t = tgt.input.seq_len();
    // dlogits = (softmax - onehot) / N on counted rows
    let mut dlogits = Array2::zeros(cache.out_probs.raw_dim());
    let inv_n = 1.0 / cache.n_counted as f64;
    for (row, &count) in cache.counted.iter().enumerate() {
        if !count {
            continue;
        }
        let b = row / t_t;
        let t = row % t_t;
        let target = tgt.targets[[b, t]] as usize;
        let mut dr = dlogits.row_mut(row);
        dr.assign(&cache.out_probs.row(row));
        dr *= inv_n;
        dr[target] -= inv_n;
    }

    // tied output projection: logits = dec_out . token_emb^T + out_bias
    let mut d_dec = dlogits.dot(&params.token_emb);
    grads.token_emb += &dlogits.t().dot(&cache.dec_out);
    grads.out_bias += &dlogits.sum_axis(Axis(0));

    // decoder stack
    let t_s = cache.enc_out.nrows() / tgt.input.batch_size();
    let cfg = &params.cfg;
    let self_shape = AttnShape {
        batch: tgt.input.batch_size(),
        t_q: t_t,
        t_k: t_t,
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let cross_shape = AttnShape {
        batch: tgt.input.batch_size(),
        t_q: t_t,
        t_k: t_s,
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let mut d_enc = Array2::zeros(cache.enc_out.raw_dim());
    for (li, layer) in params.decoder.iter().enumerate().rev() {
        let lc = &cache.dec_layers[li];
        let g = &mut grads.decoder[li];
        let dr3 = layer_norm_backward(&d_dec, &lc.ln3, &layer.ln3, &mut g.ln3.gamma, &mut g.ln3.beta);
        let mut dn2 = dr3.clone();
        dn2 += &ffn_backward(&dr3, &layer.ffn, &mut g.ffn, &lc.ffn);
        let dr2 = layer_norm_backward(&dn2, &lc.ln2, &layer.ln2, &mut g.ln2.gamma, &mut g.ln2.beta);
        let (d_n1_attn, d_enc_part) = attention_backward(
            &dr2,
            &lc.n1,
            &cache.enc_out,
            &layer.cross_attn,
            &mut g.cross_attn,
            &lc.cross_attn,
            &cross_shape,
        );
        d_enc += &d_enc_part;
        let mut dn1 = dr2;
        dn1 += &d_n1_attn;
        let dr1 = layer_norm_backward(&dn1, &lc.ln1, &layer.ln1, &mut g.ln1.gamma, &mut g.ln1.beta);
        let (dxq, dxk) = attention_backward(
            &dr1,
            &lc.x,
            &lc.x,
            &layer.self_attn,
            &mut g.self_attn,
            &lc.self_attn,
            &self_shape,
        );
        d_dec = dr1;
        d_dec += &dxq;
        d_dec += &dxk;
    }
    embed_backward(grads, &tgt.input, &d_dec);

    // encoder stack
    let enc_shape = AttnShape {
        batch: src.batch_size(),
        t_q: src.seq_len(),
        t_k: src.seq_len(),
        n_heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    for (li, layer) in params.encoder.iter().enumerate().rev() {
        let lc = &cache.enc_layers[li];
        let g = &mut grads.encoder[li];
        let dr2 = layer_norm_backward(&d_enc, &lc.ln2, &layer.ln2, &mut g.ln2.gamma, &mut g.ln2.beta);
        let mut dn1 = dr2.clone();
        dn1 += &ffn_backward(&dr2, &layer.ffn, &mut g.ffn, &lc.ffn);
        let dr1 = layer_norm_backward(&dn1, &lc.ln1, &layer.ln1, &mut g.ln1.gamma, &mut g.ln1.beta);
        let (dxq, dxk) = attention_backward(
            &dr1,
            &lc.x,
            &lc.x,
            &layer.attn,
            &mut g.attn,
            &lc.attn,
            &enc_shape,
        );
        d_enc = dr1;
        d_enc += &dxq;
        d_enc += &dxk;
    }
    embed_backward(grads, src, &d_enc);
}

/// Teacher-forced translation loss and its parameter gradients: mean
/// cross-entropy over non-padding target positions.
pub fn forward_mt_loss(
    params: &ModelParams,
    src: &Batch,
    tgt: &TargetBatch,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ModelGrads)> {
    let (loss, cache) = forward_full(params, src, tgt, rng)?;
    let mut grads = ModelGrads::zeros_like(&params.cfg);
    backward_full(params, src, tgt, &cache, &mut grads);
    Ok((loss, grads))
}

/// Loss only, no gradients (evaluation and finite differences).
pub fn mt_loss_only(params: &ModelParams, src: &Batch, tgt: &TargetBatch) -> Result<f64> {
    let (loss, _) = forward_full(params, src, tgt, None)?;
    Ok(loss)
}

/// Exposed for the row-stochasticity invariant: every attention probability
/// matrix and the output softmax from one forward pass.
#[cfg(test)]
pub(crate) fn collect_softmax_rows(
    params: &ModelParams,
    src: &Batch,
    tgt: &TargetBatch,
) -> Result<Vec<Array2<f64>>> {
    let (_, cache) = forward_full(params, src, tgt, None)?;
    let mut mats = Vec::new();
    for lc in &cache.enc_layers {
        mats.extend(lc.attn.probs.iter().cloned());
    }
    for lc in &cache.dec_layers {
        mats.extend(lc.self_attn.probs.iter().cloned());
        mats.extend(lc.cross_attn.probs.iter().cloned());
    }
    mats.push(cache.out_probs.clone());
    Ok(mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PAD_ID;
    use crate::model::objectives::{mass_batches, mt_batches, MaskCfg};
    use crate::model::ModelCfg;
    use rand::SeedableRng;

    fn cfg() -> ModelCfg {
        ModelCfg {
            d_model: 16,
            n_heads: 2,
            ffn_dim: 24,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 16,
            n_langs: 2,
            dropout: 0.0,
            vocab_size: 40,
            seed: 13,
        }
    }

    fn batches(cfg: &ModelCfg) -> (Batch, TargetBatch) {
        let src = vec![vec![5u32, 6, 7, 8, 9], vec![10, 11]];
        let tgt = vec![vec![12u32, 13], vec![14, 15, 16, 17]];
        mt_batches(&src, &tgt, 0, 1, cfg).unwrap()
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (sb, tb) = batches(&cfg);
        let loss = mt_loss_only(&params, &sb, &tb).unwrap();
        let uniform = (cfg.vocab_size as f64).ln();
        assert!(
            (loss - uniform).abs() / uniform < 0.10,
            "loss {} vs ln(V) {}",
            loss,
            uniform
        );
    }

    #[test]
    fn padding_positions_contribute_exactly_zero() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (sb, tb) = batches(&cfg);
        let base = mt_loss_only(&params, &sb, &tb).unwrap();

        // rewrite every padded cell on all sides with arbitrary real tokens
        let mut sb2 = sb.clone();
        let mut tb2 = tb.clone();
        for b in 0..sb2.tokens.nrows() {
            for t in sb2.lengths[b]..sb2.tokens.ncols() {
                sb2.tokens[[b, t]] = 9;
            }
        }
        for b in 0..tb2.input.tokens.nrows() {
            for t in tb2.input.lengths[b]..tb2.input.tokens.ncols() {
                tb2.input.tokens[[b, t]] = 8;
                tb2.targets[[b, t]] = 7;
            }
        }
        let changed = mt_loss_only(&params, &sb2, &tb2).unwrap();
        assert_eq!(base, changed);
    }

    #[test]
    fn tied_embedding_row_drives_output_projection() {
        let cfg = cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let dec_out = Array2::from_elem((1, cfg.d_model), 0.3);
        let before = output_logits(&params, &dec_out)[[0, 21]];
        for d in 0..cfg.d_model {
            params.token_emb[[21, d]] += 1.0;
        }
        let after = output_logits(&params, &dec_out)[[0, 21]];
        assert!((after - before - 0.3 * cfg.d_model as f64).abs() < 1e-9);
    }

    #[test]
    fn every_softmax_row_is_stochastic() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (sb, tb) = batches(&cfg);
        let mats = collect_softmax_rows(&params, &sb, &tb).unwrap();
        assert!(!mats.is_empty());
        for m in mats {
            for row in m.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mass_loss_depends_only_on_span_targets() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let sents = vec![vec![5u32, 6, 7, 8, 9, 10], vec![11, 12, 13]];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let (sb, tb) = mass_batches(&sents, 0, &MaskCfg::default(), &cfg, &mut rng).unwrap();
        let base = mt_loss_only(&params, &sb, &tb).unwrap();
        let mut tb2 = tb.clone();
        for b in 0..tb2.targets.nrows() {
            for t in tb2.input.lengths[b]..tb2.targets.ncols() {
                assert_eq!(tb2.targets[[b, t]], PAD_ID);
                tb2.targets[[b, t]] = 6; // arbitrary non-span target
            }
        }
        let changed = mt_loss_only(&params, &sb, &tb2).unwrap();
        assert_eq!(base, changed);
    }

    #[test]
    fn rejects_overlong_sequences() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let long: Vec<u32> = (5..22).cycle().take(20).collect();
        let r = mt_batches(&[long], &[vec![5, 6]], 0, 1, &cfg);
        assert!(r.is_err());
        let _ = params;
    }
}
