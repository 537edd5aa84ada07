//! Training-objective plumbing: teacher-forced MT batches, MASS fragment
//! masking and the denoising corruption for auto-encoding.

use super::{Batch, ModelCfg};
use crate::corpus::{BOS_ID, EOS_ID, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Decoder side of a supervised batch: teacher-forcing inputs plus the
/// shifted targets. Positions beyond `input.lengths` never count toward the
/// loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub input: Batch,
    pub targets: Array2<u32>,
}

impl TargetBatch {
    pub fn validate(&self, cfg: &ModelCfg) -> Result<()> {
        self.input.validate(cfg)?;
        if self.targets.dim() != self.input.tokens.dim() {
            return Err(Error::Data("target batch: targets shape mismatch".into()));
        }
        if self.targets.iter().any(|&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Data("target batch: target id out of range".into()));
        }
        Ok(())
    }
}

fn pad_batch(
    seqs: &[Vec<u32>],
    positions: &[Vec<u32>],
    langs: Vec<u32>,
    cfg: &ModelCfg,
) -> Result<Batch> {
    if seqs.is_empty() {
        return Err(Error::Data("batch: no sequences".into()));
    }
    let t = seqs.iter().map(Vec::len).max().unwrap();
    if t > cfg.max_len {
        return Err(Error::Data(format!(
            "batch: sequence length {} exceeds max_len {}",
            t, cfg.max_len
        )));
    }
    let mut tokens = Array2::from_elem((seqs.len(), t), PAD_ID);
    let mut pos = Array2::zeros((seqs.len(), t));
    let mut lengths = Vec::with_capacity(seqs.len());
    for (b, seq) in seqs.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::Data("batch: empty sequence".into()));
        }
        for (i, &tok) in seq.iter().enumerate() {
            tokens[[b, i]] = tok;
            pos[[b, i]] = positions[b][i];
        }
        lengths.push(seq.len());
    }
    Ok(Batch {
        tokens,
        positions: pos,
        lengths,
        langs,
    })
}

fn default_positions(seqs: &[Vec<u32>]) -> Vec<Vec<u32>> {
    seqs.iter()
        .map(|s| (0..s.len() as u32).collect())
        .collect()
}

/// Encoder input: sentence + sentence-end marker, positions from zero.
pub fn encoder_batch(sentences: &[Vec<u32>], lang: u32, cfg: &ModelCfg) -> Result<Batch> {
    let seqs: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            let mut v = s.clone();
            v.push(EOS_ID);
            v
        })
        .collect();
    let positions = default_positions(&seqs);
    pad_batch(&seqs, &positions, vec![lang; seqs.len()], cfg)
}

/// Decoder side: input BOS + sentence, targets sentence + EOS.
pub fn decoder_batch(sentences: &[Vec<u32>], lang: u32, cfg: &ModelCfg) -> Result<TargetBatch> {
    let inputs: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(s.len() + 1);
            v.push(BOS_ID);
            v.extend_from_slice(s);
            v
        })
        .collect();
    let positions = default_positions(&inputs);
    let input = pad_batch(&inputs, &positions, vec![lang; inputs.len()], cfg)?;
    let t = input.seq_len();
    let mut targets = Array2::from_elem((sentences.len(), t), PAD_ID);
    for (b, s) in sentences.iter().enumerate() {
        for (i, &tok) in s.iter().enumerate() {
            targets[[b, i]] = tok;
        }
        targets[[b, s.len()]] = EOS_ID;
    }
    Ok(TargetBatch { input, targets })
}

/// Standard teacher-forced translation batch pair.
pub fn mt_batches(
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    src_lang: u32,
    tgt_lang: u32,
    cfg: &ModelCfg,
) -> Result<(Batch, TargetBatch)> {
    if src.len() != tgt.len() {
        return Err(Error::Data("mt batch: src/tgt count mismatch".into()));
    }
    Ok((
        encoder_batch(src, src_lang, cfg)?,
        decoder_batch(tgt, tgt_lang, cfg)?,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MaskCfg {
    /// Fraction of the sentence masked as one contiguous fragment.
    pub fragment_ratio: f64,
    pub mask_id: u32,
}

impl Default for MaskCfg {
    fn default() -> Self {
        MaskCfg {
            fragment_ratio: 0.5,
            mask_id: MASK_ID,
        }
    }
}

/// One masked sentence: encoder input with the fragment replaced by mask
/// tokens, decoder input/targets covering exactly the fragment, and the
/// fragment's absolute positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MassExample {
    pub enc_tokens: Vec<u32>,
    pub dec_input: Vec<u32>,
    pub dec_positions: Vec<u32>,
    pub targets: Vec<u32>,
    pub span_start: usize,
    pub span_len: usize,
}

/// Masks one uniformly placed contiguous span of ceil(ratio * len) tokens.
pub fn mass_mask(sentence: &[u32], cfg: &MaskCfg, rng: &mut ChaCha8Rng) -> Result<MassExample> {
    if sentence.is_empty() {
        return Err(Error::Data("mass_mask: empty sentence".into()));
    }
    if !(0.0..1.0).contains(&cfg.fragment_ratio) || cfg.fragment_ratio == 0.0 {
        return Err(Error::Config("mass_mask: fragment_ratio must be in (0,1)".into()));
    }
    let n = sentence.len();
    let span_len = ((cfg.fragment_ratio * n as f64).ceil() as usize).clamp(1, n);
    let span_start = rng.gen_range(0..=n - span_len);

    let mut enc_tokens = sentence.to_vec();
    for t in enc_tokens.iter_mut().skip(span_start).take(span_len) {
        *t = cfg.mask_id;
    }
    let targets: Vec<u32> = sentence[span_start..span_start + span_len].to_vec();
    let mut dec_input = Vec::with_capacity(span_len);
    dec_input.push(BOS_ID);
    dec_input.extend_from_slice(&targets[..span_len - 1]);
    let dec_positions: Vec<u32> = (span_start as u32..(span_start + span_len) as u32).collect();
    Ok(MassExample {
        enc_tokens,
        dec_input,
        dec_positions,
        targets,
        span_start,
        span_len,
    })
}

/// Batches MASS examples: the encoder keeps absolute positions, the decoder
/// reuses the fragment's original positions.
pub fn mass_batches(
    sentences: &[Vec<u32>],
    lang: u32,
    mask_cfg: &MaskCfg,
    cfg: &ModelCfg,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch, TargetBatch)> {
    let mut enc_seqs = Vec::with_capacity(sentences.len());
    let mut dec_seqs = Vec::with_capacity(sentences.len());
    let mut dec_positions = Vec::with_capacity(sentences.len());
    let mut targets_ragged = Vec::with_capacity(sentences.len());
    for s in sentences {
        let ex = mass_mask(s, mask_cfg, rng)?;
        let mut enc = ex.enc_tokens;
        enc.push(EOS_ID);
        enc_seqs.push(enc);
        dec_seqs.push(ex.dec_input);
        dec_positions.push(ex.dec_positions);
        targets_ragged.push(ex.targets);
    }
    let enc_positions = default_positions(&enc_seqs);
    let enc = pad_batch(&enc_seqs, &enc_positions, vec![lang; sentences.len()], cfg)?;
    let dec_in = pad_batch(&dec_seqs, &dec_positions, vec![lang; sentences.len()], cfg)?;
    let t = dec_in.seq_len();
    let mut targets = Array2::from_elem((sentences.len(), t), PAD_ID);
    for (b, frag) in targets_ragged.iter().enumerate() {
        for (i, &tok) in frag.iter().enumerate() {
            targets[[b, i]] = tok;
        }
    }
    Ok((enc, TargetBatch { input: dec_in, targets }))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NoiseCfg {
    /// Each token's position is offset by a uniform integer in [0, k].
    pub shuffle_k: usize,
    pub drop_prob: f64,
    pub blank_prob: f64,
    pub seed: u64,
}

impl Default for NoiseCfg {
    fn default() -> Self {
        NoiseCfg {
            shuffle_k: 3,
            drop_prob: 0.1,
            blank_prob: 0.1,
            seed: 1,
        }
    }
}

/// Local shuffle, token removal (never emptying the sentence) and token
/// blanking, in that order.
pub fn apply_noise(sentence: &[u32], cfg: &NoiseCfg, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if sentence.is_empty() {
        return Vec::new();
    }
    // 1. shuffle: stable sort by jittered index
    let mut keyed: Vec<(usize, u32)> = sentence
        .iter()
        .enumerate()
        .map(|(i, &t)| (i + rng.gen_range(0..=cfg.shuffle_k), t))
        .collect();
    keyed.sort_by_key(|&(key, _)| key);
    let shuffled: Vec<u32> = keyed.into_iter().map(|(_, t)| t).collect();

    // 2. drop, keeping at least the first surviving candidate
    let mut kept: Vec<u32> = Vec::with_capacity(shuffled.len());
    for &t in &shuffled {
        if rng.gen::<f64>() >= cfg.drop_prob {
            kept.push(t);
        }
    }
    if kept.is_empty() {
        kept.push(shuffled[0]);
    }

    // 3. blank
    for t in kept.iter_mut() {
        if rng.gen::<f64>() < cfg.blank_prob {
            *t = MASK_ID;
        }
    }
    kept
}

/// Spec-shaped wrapper that derives its randomness from `cfg.seed`.
pub fn apply_noise_seeded(sentence: &[u32], cfg: &NoiseCfg) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    apply_noise(sentence, cfg, &mut rng)
}

/// Denoising auto-encoder batch: corrupted encoder input, clean targets,
/// same language on both sides.
pub fn noise_batches(
    sentences: &[Vec<u32>],
    lang: u32,
    noise_cfg: &NoiseCfg,
    cfg: &ModelCfg,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch, TargetBatch)> {
    let noisy: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| apply_noise(s, noise_cfg, rng))
        .collect();
    Ok((
        encoder_batch(&noisy, lang, cfg)?,
        decoder_batch(sentences, lang, cfg)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_span_arithmetic() {
        let cfg = MaskCfg::default();
        let sent: Vec<u32> = (10..18).collect(); // len 8
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ex = mass_mask(&sent, &cfg, &mut rng).unwrap();
            assert_eq!(ex.span_len, 4);
            assert!(ex.span_start <= 4);
            // encoder carries mask tokens exactly on the span
            for (i, &t) in ex.enc_tokens.iter().enumerate() {
                if i >= ex.span_start && i < ex.span_start + 4 {
                    assert_eq!(t, MASK_ID);
                } else {
                    assert_eq!(t, sent[i]);
                }
            }
            // decoder sees the gold fragment shifted right
            assert_eq!(ex.dec_input[0], BOS_ID);
            assert_eq!(&ex.dec_input[1..], &ex.targets[..3]);
            assert_eq!(
                ex.dec_positions,
                (ex.span_start as u32..ex.span_start as u32 + 4).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn mass_single_token_sentence() {
        let cfg = MaskCfg::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = mass_mask(&[42], &cfg, &mut rng).unwrap();
        assert_eq!(ex.span_len, 1);
        assert_eq!(ex.enc_tokens, vec![MASK_ID]);
        assert_eq!(ex.targets, vec![42]);
    }

    #[test]
    fn mass_deterministic() {
        let cfg = MaskCfg::default();
        let sent: Vec<u32> = (5..17).collect();
        let a = mass_mask(&sent, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mass_mask(&sent, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_identity_when_disabled() {
        let cfg = NoiseCfg {
            shuffle_k: 0,
            drop_prob: 0.0,
            blank_prob: 0.0,
            seed: 0,
        };
        let sent = vec![7, 8, 9, 10];
        assert_eq!(apply_noise_seeded(&sent, &cfg), sent);
    }

    #[test]
    fn noise_never_empties() {
        let cfg = NoiseCfg {
            shuffle_k: 0,
            drop_prob: 0.99,
            blank_prob: 0.0,
            seed: 0,
        };
        let sent: Vec<u32> = (0..10).collect();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert!(!apply_noise(&sent, &cfg, &mut rng).is_empty());
        }
    }

    #[test]
    fn noise_shuffle_is_local_permutation() {
        let cfg = NoiseCfg {
            shuffle_k: 3,
            drop_prob: 0.0,
            blank_prob: 0.0,
            seed: 123,
        };
        let sent = vec![1, 2, 3, 4, 5, 6];
        let out = apply_noise_seeded(&sent, &cfg);
        let mut sorted = out.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, sent); // permutation
        for (i, &t) in out.iter().enumerate() {
            let orig = sent.iter().position(|&x| x == t).unwrap();
            assert!((i as i64 - orig as i64).unsigned_abs() <= 3, "moved too far: {:?}", out);
        }
        // determinism
        assert_eq!(out, apply_noise_seeded(&sent, &cfg));
    }
}
