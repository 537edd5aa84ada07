//! Vocabulary transfer: surgical initialization of an unseen language's
//! language embedding and token embeddings inside a trained checkpoint,
//! driven by an induced word dictionary.

use crate::corpus::{bpe_apply, BpeModel, Vocab};
use crate::error::{Error, Result};
use crate::lexicon::BilingualDictionary;
use crate::model::{load_checkpoint, save_checkpoint, CkptMeta, ModelParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferScope {
    /// Copy only token rows that occur exclusively in the unseen language's
    /// corpus.
    ExclusiveOnly,
    /// Copy every resolvable dictionary pair.
    AllDictionary,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TransferReport {
    pub copied: usize,
    pub skipped_mismatch: usize,
    pub skipped_scope: usize,
    pub language_row_copied: bool,
}

/// language_embeddings[to] := language_embeddings[from], bitwise.
pub fn copy_language_embedding(params: &mut ModelParams, from_lang: u32, to_lang: u32) -> Result<()> {
    let n = params.lang_emb.nrows() as u32;
    if from_lang >= n || to_lang >= n {
        return Err(Error::Config(format!(
            "copy_language_embedding: language id out of range (n_langs {})",
            n
        )));
    }
    if from_lang == to_lang {
        return Err(Error::Config(
            "copy_language_embedding: from and to are the same language".into(),
        ));
    }
    let row = params.lang_emb.row(from_lang as usize).to_owned();
    params.lang_emb.row_mut(to_lang as usize).assign(&row);
    Ok(())
}

/// Resolves the word-level dictionary to token-id pairs under the model's
/// subword segmentation. Pairs whose sides segment into different numbers of
/// subwords are skipped and counted, not fatal.
pub fn word_dict_to_token_pairs(
    dict: &BilingualDictionary,
    vocab: &Vocab,
    bpe: &BpeModel,
) -> (Vec<(u32, u32)>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (src_word, entry) in &dict.entries {
        let src_subs = bpe_apply(bpe, std::slice::from_ref(src_word));
        let tgt_subs = bpe_apply(bpe, std::slice::from_ref(&entry.target));
        if src_subs.len() != tgt_subs.len() {
            skipped += 1;
            continue;
        }
        let mut resolved = Vec::with_capacity(src_subs.len());
        let mut ok = true;
        for (s, t) in src_subs.iter().zip(&tgt_subs) {
            match (vocab.id(s), vocab.id(t)) {
                (Some(si), Some(ti)) => resolved.push((si, ti)),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            pairs.extend(resolved);
        } else {
            skipped += 1;
        }
    }
    (pairs, skipped)
}

/// token_embeddings[to] := token_embeddings[from] for each id pair, subject
/// to scope. The tied output projection changes implicitly.
pub fn copy_word_embeddings(
    params: &mut ModelParams,
    token_pairs: &[(u32, u32)],
    vocab: &Vocab,
    scope: TransferScope,
    to_lang_code: &str,
) -> Result<TransferReport> {
    let mut report = TransferReport::default();
    for &(to_id, from_id) in token_pairs {
        if to_id as usize >= params.token_emb.nrows() || from_id as usize >= params.token_emb.nrows() {
            return Err(Error::Data(format!(
                "copy_word_embeddings: token id pair ({}, {}) out of range",
                to_id, from_id
            )));
        }
        if scope == TransferScope::ExclusiveOnly && !vocab.is_exclusive_to(to_id, to_lang_code) {
            report.skipped_scope += 1;
            continue;
        }
        let row = params.token_emb.row(from_id as usize).to_owned();
        params.token_emb.row_mut(to_id as usize).assign(&row);
        report.copied += 1;
    }
    Ok(report)
}

/// Checkpoint-to-checkpoint transfer: loads, copies the language row and the
/// dictionary-resolved token rows, writes a new checkpoint, and returns the
/// report. The input file is never modified.
#[allow(clippy::too_many_arguments)]
pub fn transfer_checkpoint(
    in_ckpt: &Path,
    out_ckpt: &Path,
    dict: &BilingualDictionary,
    vocab: &Vocab,
    bpe: &BpeModel,
    scope: TransferScope,
    from_lang_code: &str,
    to_lang_code: &str,
) -> Result<TransferReport> {
    let (mut params, meta) = load_checkpoint(in_ckpt, Some(&vocab.content_hash()))?;
    let lang_id = |code: &str| -> Result<u32> {
        meta.langs
            .iter()
            .position(|l| l == code)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Config(format!("language '{}' not in checkpoint ({:?})", code, meta.langs)))
    };
    let from = lang_id(from_lang_code)?;
    let to = lang_id(to_lang_code)?;
    copy_language_embedding(&mut params, from, to)?;
    let (pairs, skipped_mismatch) = word_dict_to_token_pairs(dict, vocab, bpe);
    let mut report = copy_word_embeddings(&mut params, &pairs, vocab, scope, to_lang_code)?;
    report.skipped_mismatch = skipped_mismatch;
    report.language_row_copied = true;
    let new_meta = CkptMeta {
        stage: format!("{}+transfer", meta.stage),
        ..meta
    };
    save_checkpoint(&params, &new_meta, out_ckpt)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Corpus};
    use crate::lexicon::{DictEntry, InductionMethod};
    use crate::model::ModelCfg;
    use std::collections::BTreeMap;

    fn cfg(vocab_size: usize) -> ModelCfg {
        ModelCfg {
            d_model: 8,
            n_heads: 2,
            ffn_dim: 12,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 8,
            n_langs: 3,
            dropout: 0.0,
            vocab_size,
            seed: 17,
        }
    }

    #[test]
    fn language_row_copy_is_bitwise_and_isolated() {
        let cfg = cfg(10);
        let mut params = ModelParams::init(&cfg).unwrap();
        let third_before = params.lang_emb.row(2).to_owned();
        copy_language_embedding(&mut params, 0, 1).unwrap();
        assert_eq!(params.lang_emb.row(0), params.lang_emb.row(1));
        assert_eq!(params.lang_emb.row(2), third_before);
        assert!(copy_language_embedding(&mut params, 1, 1).is_err());
        assert!(copy_language_embedding(&mut params, 0, 9).is_err());
    }

    fn fixture() -> (Vocab, BpeModel, BilingualDictionary) {
        // "dom" fully merges on both sides; "wóda"/"woda" split into two
        // equal-length pieces; "zec"(3 chars) vs "zo"(2) mismatches.
        let bpe = BpeModel {
            merges: vec![
                ("d".into(), "o".into()),
                ("do".into(), "m".into()),
                ("d".into(), "a".into()),
            ],
            continuation_marker: "@@".into(),
            num_merges: 3,
        };
        let b_corpus = Corpus::from_lines("lb", ["dom woda zo ham"]);
        let bp_corpus = Corpus::from_lines("lbp", ["dom wóda zec"]);
        let vocab = build_vocab(&[&b_corpus, &bp_corpus], &bpe);
        let mut entries = BTreeMap::new();
        entries.insert(
            "dom".to_string(),
            DictEntry { target: "dom".into(), cosine: 1.0, levenshtein: 0 },
        );
        entries.insert(
            "wóda".to_string(),
            DictEntry { target: "woda".into(), cosine: 0.9, levenshtein: 1 },
        );
        entries.insert(
            "zec".to_string(),
            DictEntry { target: "zo".into(), cosine: 0.8, levenshtein: 2 },
        );
        let dict = BilingualDictionary { entries, method: InductionMethod::Levenshtein };
        (vocab, bpe, dict)
    }

    #[test]
    fn dict_resolution_handles_segment_counts() {
        let (vocab, bpe, dict) = fixture();
        let (pairs, skipped) = word_dict_to_token_pairs(&dict, &vocab, &bpe);
        // "dom"->"dom" merges fully: 1 identical pair. "wóda"->"woda" both
        // split [w@@, ó@@/o@@, da]: 3 positional pairs. "zec"(3) vs "zo"(2)
        // mismatches.
        assert_eq!(skipped, 1, "zec/zo should mismatch");
        assert_eq!(pairs.len(), 4);
        let dom = vocab.id("dom").unwrap();
        assert!(pairs.contains(&(dom, dom)));
        let o_acc = vocab.id("ó@@").unwrap();
        let o = vocab.id("o@@").unwrap();
        assert!(pairs.contains(&(o_acc, o)));
        let da = vocab.id("da").unwrap();
        assert!(pairs.contains(&(da, da)));
    }

    #[test]
    fn surgery_touches_only_planned_rows() {
        let (vocab, bpe, dict) = fixture();
        let cfg = cfg(vocab.len());
        let mut params = ModelParams::init(&cfg).unwrap();
        let before = params.clone();
        let (pairs, _) = word_dict_to_token_pairs(&dict, &vocab, &bpe);
        let report =
            copy_word_embeddings(&mut params, &pairs, &vocab, TransferScope::AllDictionary, "lbp")
                .unwrap();
        assert_eq!(report.copied, 4);
        // planned rows equal their sources, everything else identical
        for &(to, from) in &pairs {
            assert_eq!(params.token_emb.row(to as usize), params.token_emb.row(from as usize));
        }
        assert_eq!(
            params.checksum_excluding(&["token_emb"]),
            before.checksum_excluding(&["token_emb"])
        );
        for id in 0..vocab.len() as u32 {
            if pairs.iter().all(|&(to, _)| to != id) {
                assert_eq!(
                    params.token_emb.row(id as usize),
                    before.token_emb.row(id as usize),
                    "untouched row {} changed",
                    id
                );
            }
        }
        // idempotence
        let snapshot = params.clone();
        copy_word_embeddings(&mut params, &pairs, &vocab, TransferScope::AllDictionary, "lbp")
            .unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn exclusive_scope_skips_shared_tokens() {
        let (vocab, bpe, dict) = fixture();
        let cfg = cfg(vocab.len());
        let mut params = ModelParams::init(&cfg).unwrap();
        let (pairs, _) = word_dict_to_token_pairs(&dict, &vocab, &bpe);
        let report =
            copy_word_embeddings(&mut params, &pairs, &vocab, TransferScope::ExclusiveOnly, "lbp")
                .unwrap();
        // "dom", "w@@" and "da" occur in lb too -> skipped; "ó@@" is the
        // only exclusive target row
        assert_eq!(report.copied, 1);
        assert_eq!(report.skipped_scope, 3);
    }

    #[test]
    fn logit_equivalence_after_copy() {
        let (vocab, bpe, dict) = fixture();
        let cfg = cfg(vocab.len());
        let mut params = ModelParams::init(&cfg).unwrap();
        let (pairs, _) = word_dict_to_token_pairs(&dict, &vocab, &bpe);
        copy_word_embeddings(&mut params, &pairs, &vocab, TransferScope::AllDictionary, "lbp")
            .unwrap();
        // any hidden state: tied projection gives equal logits for the pair
        let h = ndarray::Array2::from_shape_fn((1, cfg.d_model), |(_, j)| 0.1 * j as f64 - 0.3);
        let logits = h.dot(&params.token_emb.t());
        for &(to, from) in &pairs {
            assert!((logits[[0, to as usize]] - logits[[0, from as usize]]).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_transfer_round_trip() {
        let (vocab, bpe, dict) = fixture();
        let cfg = cfg(vocab.len());
        let params = ModelParams::init(&cfg).unwrap();
        let meta = CkptMeta {
            cfg: cfg.clone(),
            vocab_hash: vocab.content_hash(),
            step: 10,
            stage: "step2".into(),
            langs: vec!["la".into(), "lb".into(), "lbp".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let p_in = dir.path().join("in.ckpt");
        let p_out = dir.path().join("out.ckpt");
        save_checkpoint(&params, &meta, &p_in).unwrap();
        let report = transfer_checkpoint(
            &p_in,
            &p_out,
            &dict,
            &vocab,
            &bpe,
            TransferScope::ExclusiveOnly,
            "lb",
            "lbp",
        )
        .unwrap();
        assert!(report.language_row_copied);
        assert_eq!(report.skipped_mismatch, 1);
        let (out_params, out_meta) = load_checkpoint(&p_out, None).unwrap();
        assert_eq!(out_meta.stage, "step2+transfer");
        assert_eq!(out_params.lang_emb.row(1), out_params.lang_emb.row(2));
        // input untouched
        let (in_params, _) = load_checkpoint(&p_in, None).unwrap();
        assert_eq!(in_params, params);
    }
}
