//! Back-translation rounds. Generation always runs on a frozen parameter
//! snapshot (an immutable borrow taken before the update); gradients only
//! flow through the supervised half.

use crate::error::Result;
use crate::model::{
    mt_batches, train_step, translate_batch, AdamState, ModelParams, ObjectiveBatch, ObjectiveTag,
    OptimCfg,
};
use rand_chacha::ChaCha8Rng;

/// Pairs up generated sources with their real targets, dropping rows whose
/// generation came out empty.
fn paired(src: Vec<Vec<u32>>, tgt: &[Vec<u32>]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut s = Vec::with_capacity(src.len());
    let mut t = Vec::with_capacity(src.len());
    for (gen, real) in src.into_iter().zip(tgt) {
        if !gen.is_empty() && !real.is_empty() {
            s.push(gen);
            t.push(real.clone());
        }
    }
    (s, t)
}

/// One online back-translation round on the pair (L, M): generate M' from
/// L-monolingual text and train M'->L, and vice versa, in a single update.
#[allow(clippy::too_many_arguments)]
pub fn online_bt_round(
    params: &mut ModelParams,
    state: &mut AdamState,
    optim: &OptimCfg,
    mono_l: &[Vec<u32>],
    mono_m: &[Vec<u32>],
    lang_l: u32,
    lang_m: u32,
    beam: usize,
    max_out_len: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    // frozen generation: &*params is released before the update below
    let m_prime = translate_batch(&*params, mono_l, lang_l, lang_m, beam, max_out_len)?;
    let l_prime = translate_batch(&*params, mono_m, lang_m, lang_l, beam, max_out_len)?;

    let cfg = params.cfg.clone();
    let mut batches = Vec::new();
    let (s, t) = paired(m_prime, mono_l);
    if !s.is_empty() {
        let (sb, tb) = mt_batches(&s, &t, lang_m, lang_l, &cfg)?;
        batches.push(ObjectiveBatch { tag: ObjectiveTag::Bt, src: sb, tgt: tb });
    }
    let (s, t) = paired(l_prime, mono_m);
    if !s.is_empty() {
        let (sb, tb) = mt_batches(&s, &t, lang_l, lang_m, &cfg)?;
        batches.push(ObjectiveBatch { tag: ObjectiveTag::Bt, src: sb, tgt: tb });
    }
    if batches.is_empty() {
        return Ok(0.0);
    }
    let losses = train_step(params, state, &batches, optim, rng)?;
    Ok(losses.iter().map(|(_, l)| l).sum())
}

/// One cross-lingual back-translation round through `pivot`: translate the
/// related side into the pivot and supervise pivot->high with the real
/// reference, plus the symmetric variant.
#[allow(clippy::too_many_arguments)]
pub fn xbt_round(
    params: &mut ModelParams,
    state: &mut AdamState,
    optim: &OptimCfg,
    related: &[Vec<u32>],
    high: &[Vec<u32>],
    lang_related: u32,
    lang_high: u32,
    pivot: u32,
    beam: usize,
    max_out_len: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let z_from_related = translate_batch(&*params, related, lang_related, pivot, beam, max_out_len)?;
    let z_from_high = translate_batch(&*params, high, lang_high, pivot, beam, max_out_len)?;

    let cfg = params.cfg.clone();
    let mut batches = Vec::new();
    let (s, t) = paired(z_from_related, high);
    if !s.is_empty() {
        let (sb, tb) = mt_batches(&s, &t, pivot, lang_high, &cfg)?;
        batches.push(ObjectiveBatch { tag: ObjectiveTag::Xbt, src: sb, tgt: tb });
    }
    let (s, t) = paired(z_from_high, related);
    if !s.is_empty() {
        let (sb, tb) = mt_batches(&s, &t, pivot, lang_related, &cfg)?;
        batches.push(ObjectiveBatch { tag: ObjectiveTag::Xbt, src: sb, tgt: tb });
    }
    if batches.is_empty() {
        return Ok(0.0);
    }
    let losses = train_step(params, state, &batches, optim, rng)?;
    Ok(losses.iter().map(|(_, l)| l).sum())
}

#[derive(Debug, Clone)]
pub struct OfflineBt {
    /// Generated sentences (the new source side).
    pub synthetic: Vec<Vec<u32>>,
    /// The original monolingual sentences (the natural target side).
    pub original: Vec<Vec<u32>>,
    pub skipped: usize,
}

/// Decodes a whole monolingual corpus once with frozen parameters, emitting
/// an aligned synthetic parallel corpus for training direction M->L with
/// natural data on the target side. Overlong or empty rows are skipped and
/// counted.
pub fn offline_bt_generate(
    params: &ModelParams,
    mono: &[Vec<u32>],
    lang_l: u32,
    lang_m: u32,
    beam: usize,
    max_out_len: usize,
) -> Result<OfflineBt> {
    let limit = params.cfg.max_len.saturating_sub(2);
    let mut keep: Vec<Vec<u32>> = Vec::with_capacity(mono.len());
    let mut skipped = 0;
    for s in mono {
        if s.is_empty() || s.len() > limit {
            skipped += 1;
        } else {
            keep.push(s.clone());
        }
    }
    let mut synthetic = Vec::with_capacity(keep.len());
    let mut original = Vec::with_capacity(keep.len());
    for chunk in keep.chunks(16) {
        let outs = translate_batch(params, chunk, lang_l, lang_m, beam, max_out_len)?;
        for (gen, orig) in outs.into_iter().zip(chunk) {
            if gen.is_empty() {
                skipped += 1;
            } else {
                synthetic.push(gen);
                original.push(orig.clone());
            }
        }
    }
    Ok(OfflineBt {
        synthetic,
        original,
        skipped,
    })
}
