//! Beam-search decoding with length-normalized scores. Beam 1 is exactly
//! stepwise argmax; hypotheses across sentences and beams are batched into
//! one decoder forward per step.

use super::loss::{forward_decoder, forward_encoder, output_logits};
use super::objectives::encoder_batch;
use super::{Batch, ModelParams};
use crate::corpus::{BOS_ID, EOS_ID, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use ndarray::{s, Array2};

#[derive(Clone)]
struct Beam {
    sent: usize,
    tokens: Vec<u32>,
    logp: f64,
}

#[derive(Clone)]
struct Finished {
    tokens: Vec<u32>,
    score: f64,
}

/// Translates every sentence; returns generated token ids without
/// sentence markers. Output length never exceeds `max_out_len`.
pub fn translate_batch(
    params: &ModelParams,
    sentences: &[Vec<u32>],
    src_lang: u32,
    tgt_lang: u32,
    beam_size: usize,
    max_out_len: usize,
) -> Result<Vec<Vec<u32>>> {
    if beam_size == 0 {
        return Err(Error::Config("translate: beam_size must be >= 1".into()));
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &params.cfg;
    let src = encoder_batch(sentences, src_lang, cfg)?;
    let (enc_out, _) = forward_encoder(params, &src, None);
    let t_s = src.seq_len();
    let d = cfg.d_model;

    let n = sentences.len();
    let mut active: Vec<Beam> = (0..n)
        .map(|sent| Beam {
            sent,
            tokens: Vec::new(),
            logp: 0.0,
        })
        .collect();
    let mut finished: Vec<Vec<Finished>> = vec![Vec::new(); n];

    // positions must stay inside the learned table
    let max_steps = max_out_len.min(cfg.max_len - 1);
    for step in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let rows = active.len();
        let t_t = step + 1;
        let mut tokens = Array2::from_elem((rows, t_t), PAD_ID);
        let mut positions = Array2::zeros((rows, t_t));
        let mut enc_rep = Array2::zeros((rows * t_s, d));
        let mut src_lengths = Vec::with_capacity(rows);
        for (r, beam) in active.iter().enumerate() {
            tokens[[r, 0]] = BOS_ID;
            for (i, &t) in beam.tokens.iter().enumerate() {
                tokens[[r, i + 1]] = t;
            }
            for i in 0..t_t {
                positions[[r, i]] = i as u32;
            }
            enc_rep
                .slice_mut(s![r * t_s..(r + 1) * t_s, ..])
                .assign(&enc_out.slice(s![beam.sent * t_s..(beam.sent + 1) * t_s, ..]));
            src_lengths.push(src.lengths[beam.sent]);
        }
        let dec_in = Batch {
            tokens,
            positions,
            lengths: vec![t_t; rows],
            langs: vec![tgt_lang; rows],
        };
        let (dec_out, _) = forward_decoder(params, &enc_rep, &src_lengths, &dec_in, None);
        let logits = output_logits(params, &dec_out);

        // last position of each row -> log-probabilities
        let mut expansions: Vec<Vec<(f64, u32, usize)>> = vec![Vec::new(); n];
        for (r, beam) in active.iter().enumerate() {
            let row = logits.row(r * t_t + t_t - 1);
            let max = row
                .iter()
                .enumerate()
                .filter(|(tok, _)| !suppressed(*tok as u32))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .enumerate()
                    .filter(|(tok, _)| !suppressed(*tok as u32))
                    .map(|(_, v)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for (tok, &v) in row.iter().enumerate() {
                let tok = tok as u32;
                if suppressed(tok) {
                    continue;
                }
                expansions[beam.sent].push((beam.logp + (v - lse), tok, r));
            }
        }

        let mut next_active = Vec::new();
        for sent in 0..n {
            if expansions[sent].is_empty() {
                continue;
            }
            let cand = &mut expansions[sent];
            cand.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("finite log-probs")
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
            for &(logp, tok, r) in cand.iter().take(beam_size) {
                let beam = &active[r];
                if tok == EOS_ID {
                    let len = beam.tokens.len() + 1;
                    finished[sent].push(Finished {
                        tokens: beam.tokens.clone(),
                        score: logp / len as f64,
                    });
                } else {
                    let mut tokens = beam.tokens.clone();
                    tokens.push(tok);
                    next_active.push(Beam {
                        sent,
                        tokens,
                        logp,
                    });
                }
            }
        }
        // a sentence with enough finished hypotheses stops expanding
        active = next_active
            .into_iter()
            .filter(|b| finished[b.sent].len() < beam_size)
            .collect();
    }

    // unterminated beams still compete, normalized by their length
    for beam in active {
        let len = beam.tokens.len().max(1);
        finished[beam.sent].push(Finished {
            score: beam.logp / len as f64,
            tokens: beam.tokens,
        });
    }

    let mut out = Vec::with_capacity(n);
    for mut cands in finished {
        if cands.is_empty() {
            // max_out_len 0; emit nothing
            out.push(Vec::new());
            continue;
        }
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        out.push(cands[0].tokens.clone());
    }
    Ok(out)
}

fn suppressed(tok: u32) -> bool {
    tok == PAD_ID || tok == BOS_ID || tok == MASK_ID
}

/// Single-sentence convenience wrapper.
pub fn translate(
    params: &ModelParams,
    sentence: &[u32],
    src_lang: u32,
    tgt_lang: u32,
    beam_size: usize,
    max_out_len: usize,
) -> Result<Vec<u32>> {
    let mut out = translate_batch(
        params,
        &[sentence.to_vec()],
        src_lang,
        tgt_lang,
        beam_size,
        max_out_len,
    )?;
    Ok(out.pop().expect("one sentence in, one out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objectives::mt_batches;
    use crate::model::train::{train_step, AdamState, ObjectiveBatch, ObjectiveTag};
    use crate::model::{ModelCfg, OptimCfg};

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
            vocab_size: 16,
            seed: 7,
        }
    }

    /// Reference greedy decoder: argmax step by step, no beam machinery.
    fn greedy_reference(
        params: &ModelParams,
        sentence: &[u32],
        src_lang: u32,
        tgt_lang: u32,
        max_out_len: usize,
    ) -> Vec<u32> {
        let cfg = &params.cfg;
        let src = encoder_batch(&[sentence.to_vec()], src_lang, cfg).unwrap();
        let (enc_out, _) = forward_encoder(params, &src, None);
        let mut tokens: Vec<u32> = Vec::new();
        for step in 0..max_out_len.min(cfg.max_len - 1) {
            let t_t = step + 1;
            let mut toks = Array2::from_elem((1, t_t), PAD_ID);
            toks[[0, 0]] = BOS_ID;
            for (i, &t) in tokens.iter().enumerate() {
                toks[[0, i + 1]] = t;
            }
            let positions = Array2::from_shape_fn((1, t_t), |(_, i)| i as u32);
            let dec_in = Batch {
                tokens: toks,
                positions,
                lengths: vec![t_t],
                langs: vec![tgt_lang],
            };
            let (dec_out, _) = forward_decoder(params, &enc_out, &src.lengths, &dec_in, None);
            let logits = output_logits(params, &dec_out);
            let row = logits.row(t_t - 1);
            let mut best = (f64::NEG_INFINITY, 0u32);
            for (tok, &v) in row.iter().enumerate() {
                let tok = tok as u32;
                if suppressed(tok) {
                    continue;
                }
                if v > best.0 {
                    best = (v, tok);
                }
            }
            if best.1 == EOS_ID {
                break;
            }
            tokens.push(best.1);
        }
        tokens
    }

    #[test]
    fn beam_one_equals_greedy() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        for sent in [vec![5u32, 6, 7], vec![8, 9, 10, 11], vec![12]] {
            let beam = translate(&params, &sent, 0, 1, 1, 10).unwrap();
            let greedy = greedy_reference(&params, &sent, 0, 1, 10);
            assert_eq!(beam, greedy);
        }
    }

    #[test]
    fn output_respects_max_len() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        for cap in [0usize, 1, 3, 8] {
            let out = translate(&params, &[5, 6, 7, 8], 0, 1, 2, cap).unwrap();
            assert!(out.len() <= cap, "cap {} out {:?}", cap, out);
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let a = translate(&params, &[5, 9, 6], 0, 1, 1, 12).unwrap();
        let b = translate(&params, &[5, 9, 6], 0, 1, 1, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overfit_model_reproduces_training_targets() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let mut state = AdamState::new(&cfg);
        let src: Vec<Vec<u32>> = vec![vec![5, 6, 7], vec![8, 9]];
        let tgt: Vec<Vec<u32>> = vec![vec![10, 11], vec![12, 13, 14]];
        let (sb, tb) = mt_batches(&src, &tgt, 0, 1, &cfg).unwrap();
        let optim = OptimCfg { lr: 3e-3, warmup_steps: 10, ..OptimCfg::default() };
        for _ in 0..300 {
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
        let hyp = translate_batch(&params, &src, 0, 1, 1, 10).unwrap();
        assert_eq!(hyp, tgt);
    }
}
