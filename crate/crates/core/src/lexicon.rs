//! Bilingual dictionary induction from aligned embeddings: top-k cosine
//! retrieval, accent-stripped Levenshtein re-ranking and the high-resource
//! frequency filter.

use crate::corpus::Corpus;
use crate::embed::{knn, EmbeddingTable};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InductionMethod {
    /// Take the cosine rank-1 candidate.
    Simple,
    /// Among the top-k cosine candidates, take the accent-stripped
    /// Levenshtein-closest one.
    Levenshtein,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct InductionCfg {
    pub k: usize,
    pub method: InductionMethod,
    /// Entries whose source occurs more often than this fraction in the
    /// high-resource corpus are dropped by the filter.
    pub freq_threshold: f64,
}

impl Default for InductionCfg {
    fn default() -> Self {
        InductionCfg {
            k: 10,
            method: InductionMethod::Levenshtein,
            freq_threshold: 1e-5,
        }
    }
}

/// One induced translation per source word.
#[derive(Debug, Clone, PartialEq)]
pub struct DictEntry {
    pub target: String,
    pub cosine: f64,
    pub levenshtein: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilingualDictionary {
    pub entries: BTreeMap<String, DictEntry>,
    pub method: InductionMethod,
}

impl BilingualDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// "src<TAB>tgt<TAB>cosine<TAB>lev" per line, sorted by source.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (src, e) in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                src, e.target, e.cosine, e.levenshtein
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, method: InductionMethod) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Data(format!(
                    "dictionary line {}: expected 4 tab-separated columns",
                    no + 1
                )));
            }
            let cosine: f64 = cols[2]
                .parse()
                .map_err(|_| Error::Data(format!("dictionary line {}: bad cosine", no + 1)))?;
            let levenshtein: usize = cols[3]
                .parse()
                .map_err(|_| Error::Data(format!("dictionary line {}: bad distance", no + 1)))?;
            entries.insert(
                cols[0].to_string(),
                DictEntry {
                    target: cols[1].to_string(),
                    cosine,
                    levenshtein,
                },
            );
        }
        Ok(BilingualDictionary { entries, method })
    }

    pub fn summary(&self) -> String {
        let mean_lev = if self.entries.is_empty() {
            0.0
        } else {
            self.entries.values().map(|e| e.levenshtein as f64).sum::<f64>() / self.len() as f64
        };
        format!("entries={} mean_levenshtein={:.3}", self.len(), mean_lev)
    }
}

/// Canonical decomposition with combining marks removed, plus a table for
/// letters that do not decompose (stroked/slashed forms). Case-preserving.
pub fn strip_accents(word: &str) -> String {
    word.nfd()
        .filter(|c| !is_combining_mark(*c))
        .map(|c| match c {
            'ł' => 'l',
            'Ł' => 'L',
            'ø' => 'o',
            'Ø' => 'O',
            'đ' => 'd',
            'Đ' => 'D',
            'ħ' => 'h',
            'Ħ' => 'H',
            _ => c,
        })
        .collect()
}

/// Unit-cost insert/delete/substitute edit distance over Unicode scalars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Induces one target per source word from the mapped source table: top-k
/// cosine candidates, then either rank-1 (simple) or minimum accent-stripped
/// Levenshtein distance, ties broken by higher cosine then lexicographically.
pub fn induce(
    src_emb_mapped: &EmbeddingTable,
    tgt_emb: &EmbeddingTable,
    cfg: &InductionCfg,
) -> Result<BilingualDictionary> {
    if src_emb_mapped.is_empty() || tgt_emb.is_empty() {
        return Err(Error::Data("induce: empty embedding table".into()));
    }
    if cfg.k == 0 {
        return Err(Error::Config("induce: k must be positive".into()));
    }
    let k = cfg.k.min(tgt_emb.len());
    let mut entries = BTreeMap::new();
    for src_word in &src_emb_mapped.words {
        let query = src_emb_mapped.vector(src_word).expect("own word");
        let candidates = knn(query, tgt_emb, k)?;
        let src_stripped = strip_accents(src_word);
        let chosen = match cfg.method {
            InductionMethod::Simple => {
                let (tgt, cos) = candidates[0].clone();
                let lev = levenshtein(&src_stripped, &strip_accents(&tgt));
                DictEntry { target: tgt, cosine: cos, levenshtein: lev }
            }
            InductionMethod::Levenshtein => {
                // lowest distance wins; ties break by higher cosine, then
                // lexicographically by target
                let beats = |cand: &DictEntry, best: &DictEntry| {
                    cand.levenshtein < best.levenshtein
                        || (cand.levenshtein == best.levenshtein
                            && (cand.cosine > best.cosine
                                || (cand.cosine == best.cosine && cand.target < best.target)))
                };
                let mut best: Option<DictEntry> = None;
                for (tgt, cos) in &candidates {
                    let cand = DictEntry {
                        target: tgt.clone(),
                        cosine: *cos,
                        levenshtein: levenshtein(&src_stripped, &strip_accents(tgt)),
                    };
                    if best.as_ref().map_or(true, |b| beats(&cand, b)) {
                        best = Some(cand);
                    }
                }
                best.expect("k >= 1 candidates")
            }
        };
        entries.insert(src_word.clone(), chosen);
    }
    Ok(BilingualDictionary { entries, method: cfg.method })
}

/// Drops entries whose source occurs strictly more often than `threshold`
/// (as a token fraction) in the high-resource corpus.
pub fn freq_filter(
    dict: &BilingualDictionary,
    de_corpus: &Corpus,
    threshold: f64,
) -> Result<BilingualDictionary> {
    if de_corpus.token_count == 0 {
        return Err(Error::Data("freq_filter: corpus has no tokens".into()));
    }
    let mut entries = BTreeMap::new();
    for (src, e) in &dict.entries {
        if de_corpus.freq_fraction(src)? <= threshold {
            entries.insert(src.clone(), e.clone());
        }
    }
    Ok(BilingualDictionary { entries, method: dict.method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn strip_accents_cases() {
        assert_eq!(strip_accents("abc"), "abc");
        assert_eq!(strip_accents("źeń"), "zen");
        assert_eq!(strip_accents("łuža"), "luza");
        assert_eq!(strip_accents("Łódź"), "Lodz");
        assert_eq!(strip_accents("ěóšž"), "eosz");
    }

    #[test]
    fn levenshtein_cases() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "ab"), 2);
        assert_eq!(levenshtein("ab", ""), 2);
        assert_eq!(levenshtein("źeń", "zen"), 2); // distinct scalars count
    }

    fn toy_tables() -> (EmbeddingTable, EmbeddingTable) {
        // source "abd" sits closest to target "abc" (cos 0.9-ish) with "abd"
        // second; levenshtein should flip the choice.
        let src = EmbeddingTable::new(
            "s",
            vec!["abd".into()],
            array![[1.0, 0.0]],
            0,
        )
        .unwrap();
        let tgt = EmbeddingTable::new(
            "t",
            vec!["abc".into(), "abd".into(), "zzz".into()],
            array![[0.9, 0.435889894354067], [0.8, 0.6], [-1.0, 0.0]],
            0,
        )
        .unwrap();
        (src, tgt)
    }

    #[test]
    fn induce_simple_vs_levenshtein() {
        let (src, tgt) = toy_tables();
        let simple = induce(
            &src,
            &tgt,
            &InductionCfg { k: 2, method: InductionMethod::Simple, ..Default::default() },
        )
        .unwrap();
        assert_eq!(simple.entries["abd"].target, "abc");
        let lev = induce(
            &src,
            &tgt,
            &InductionCfg { k: 2, method: InductionMethod::Levenshtein, ..Default::default() },
        )
        .unwrap();
        assert_eq!(lev.entries["abd"].target, "abd");
        assert_eq!(lev.entries["abd"].levenshtein, 0);
    }

    #[test]
    fn induce_k1_methods_agree() {
        let (src, tgt) = toy_tables();
        for_k1(&src, &tgt);
    }

    fn for_k1(src: &EmbeddingTable, tgt: &EmbeddingTable) {
        let s = induce(
            src,
            tgt,
            &InductionCfg { k: 1, method: InductionMethod::Simple, ..Default::default() },
        )
        .unwrap();
        let l = induce(
            src,
            tgt,
            &InductionCfg { k: 1, method: InductionMethod::Levenshtein, ..Default::default() },
        )
        .unwrap();
        for (w, e) in &s.entries {
            assert_eq!(e.target, l.entries[w].target);
        }
    }

    #[test]
    fn induce_identity_on_identical_tables() {
        let m = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.6, 0.8, 0.0]
        ];
        let t = EmbeddingTable::new(
            "x",
            vec!["ala".into(), "bol".into(), "cez".into(), "dur".into()],
            m,
            0,
        )
        .unwrap();
        let d = induce(&t, &t, &InductionCfg::default()).unwrap();
        for (s, e) in &d.entries {
            assert_eq!(s, &e.target);
            assert_eq!(e.levenshtein, 0);
        }
    }

    #[test]
    fn induce_k_clamps_to_vocab() {
        let (src, tgt) = toy_tables();
        let d = induce(
            &src,
            &tgt,
            &InductionCfg { k: 50, method: InductionMethod::Levenshtein, ..Default::default() },
        )
        .unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn freq_filter_boundaries() {
        let (src, tgt) = toy_tables();
        let dict = induce(&src, &tgt, &InductionCfg::default()).unwrap();

        // absent word: kept
        let de = Corpus::from_lines("de", ["nothing here at all"]);
        let kept = freq_filter(&dict, &de, 1e-5).unwrap();
        assert_eq!(kept.len(), dict.len());

        // exactly at threshold: kept ("more than" is strict)
        let mut lines = vec!["x".to_string(); 99_999];
        lines.push("abd".to_string());
        let de = Corpus::from_lines("de", lines); // abd freq 1e-5
        let kept = freq_filter(&dict, &de, 1e-5).unwrap();
        assert!(kept.entries.contains_key("abd"));

        // above threshold: removed
        let mut lines = vec!["x".to_string(); 49_999];
        lines.push("abd".to_string());
        let de = Corpus::from_lines("de", lines); // abd freq 2e-5
        let removed = freq_filter(&dict, &de, 1e-5).unwrap();
        assert!(!removed.entries.contains_key("abd"));

        // idempotence and subset
        let twice = freq_filter(&kept, &de, 1e-5).unwrap();
        let thrice = freq_filter(&twice, &de, 1e-5).unwrap();
        assert_eq!(twice.entries, thrice.entries);
        for k in twice.entries.keys() {
            assert!(dict.entries.contains_key(k));
        }
    }

    #[test]
    fn dictionary_file_round_trip() {
        let (src, tgt) = toy_tables();
        let dict = induce(&src, &tgt, &InductionCfg::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dict.tsv");
        dict.save(&p).unwrap();
        let loaded = BilingualDictionary::load(&p, dict.method).unwrap();
        assert_eq!(loaded.len(), dict.len());
        for (k, e) in &dict.entries {
            assert_eq!(loaded.entries[k].target, e.target);
            assert_eq!(loaded.entries[k].levenshtein, e.levenshtein);
        }
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(a in "[a-cź]{0,6}", b in "[a-cź]{0,6}", c in "[a-cź]{0,6}") {
            // symmetry
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            // identity of indiscernibles
            prop_assert_eq!(levenshtein(&a, &a), 0);
            if levenshtein(&a, &b) == 0 {
                prop_assert_eq!(&a, &b);
            }
            // triangle inequality
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn strip_accents_is_idempotent(w in "[a-zźżłóšě]{0,8}") {
            let once = strip_accents(&w);
            prop_assert_eq!(strip_accents(&once), once);
        }
    }
}
