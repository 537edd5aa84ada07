//! Corpus-level BLEU-4: clipped modified n-gram precisions, geometric mean,
//! brevity penalty, add-one smoothing on higher-order precisions with zero
//! matches.

use crate::error::{Error, Result};
use std::collections::HashMap;

const MAX_N: usize = 4;

/// Scores hypotheses against single references at the word level.
/// Returns a value in [0, 100].
pub fn evaluate_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Data("bleu: empty hypothesis set".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }

    let mut matches = [0u64; MAX_N];
    let mut totals = [0u64; MAX_N];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for n in 1..=MAX_N {
            let hyp_counts = ngram_counts(hyp, n);
            let ref_counts = ngram_counts(rf, n);
            for (gram, &c) in &hyp_counts {
                totals[n - 1] += c;
                if let Some(&rc) = ref_counts.get(gram) {
                    matches[n - 1] += c.min(rc);
                }
            }
        }
    }

    if matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_N {
        let p = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            // add-one smoothing for n >= 2 with zero matches
            1.0 / (totals[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / MAX_N as f64).exp();
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * geo)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut map: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn perfect_match_is_100() {
        let h = vec![toks("a b c d e"), toks("x y z")];
        assert!((evaluate_bleu(&h, &h).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_is_0() {
        let h = vec![toks("a b c")];
        let r = vec![toks("x y z")];
        assert_eq!(evaluate_bleu(&h, &r).unwrap(), 0.0);
    }

    #[test]
    fn hand_example_with_brevity_penalty() {
        // precisions all 1 over counts (4,3,2,1); BP = exp(1 - 5/4)
        let h = vec![toks("a b c d")];
        let r = vec![toks("a b c d e")];
        let bleu = evaluate_bleu(&h, &r).unwrap();
        let expect = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
        assert!((bleu - expect).abs() < 1e-9);
        assert!((bleu - 77.88).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(evaluate_bleu(&[], &[]).is_err());
        let h = vec![toks("a")];
        assert!(evaluate_bleu(&h, &[]).is_err());
    }

    #[test]
    fn short_hypotheses_smooth_not_crash() {
        let h = vec![toks("a b")]; // no 3-grams or 4-grams at all
        let r = vec![toks("a b")];
        let bleu = evaluate_bleu(&h, &r).unwrap();
        assert!(bleu > 0.0 && bleu <= 100.0);
    }

    proptest! {
        #[test]
        fn pair_order_invariance(perm_seed in 0u64..50) {
            let pairs = vec![
                (toks("a b c d"), toks("a b x d")),
                (toks("q w e"), toks("q w e r")),
                (toks("z z z"), toks("z z")),
                (toks("m n"), toks("m n")),
            ];
            let base: Vec<_> = pairs.clone();
            let mut shuffled = pairs;
            // cheap deterministic shuffle
            let k = (perm_seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            if perm_seed % 2 == 0 { shuffled.reverse(); }
            let (h1, r1): (Vec<_>, Vec<_>) = base.into_iter().unzip();
            let (h2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let b1 = evaluate_bleu(&h1, &r1).unwrap();
            let b2 = evaluate_bleu(&h2, &r2).unwrap();
            prop_assert!((b1 - b2).abs() < 1e-12);
        }

        #[test]
        fn bounded_and_100_iff_exact(ref_words in proptest::collection::vec("[a-c]{1,2}", 1..8),
                                     hyp_words in proptest::collection::vec("[a-c]{1,2}", 1..8)) {
            let h = vec![hyp_words.clone()];
            let r = vec![ref_words.clone()];
            let b = evaluate_bleu(&h, &r).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
            if (b - 100.0).abs() < 1e-9 {
                // equality of n-gram multisets at every order with c >= r
                prop_assert!(hyp_words.len() >= ref_words.len());
                for n in 1..=MAX_N.min(hyp_words.len()) {
                    let hc = ngram_counts(&h[0], n);
                    let rc = ngram_counts(&r[0], n);
                    prop_assert_eq!(hc, rc);
                }
            }
            if hyp_words == ref_words {
                prop_assert!((b - 100.0).abs() < 1e-9);
            }
        }
    }
}
