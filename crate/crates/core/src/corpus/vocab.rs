//! Subword vocabulary with reserved special tokens and per-language
//! occurrence sets.

use crate::corpus::bpe::{BpeCache, BpeModel};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

/// Dense token<->id bijection. Ids 0-4 are reserved for the special tokens;
/// `per_language_sets` records which languages each real token occurs in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    pub per_language_sets: BTreeMap<String, BTreeSet<u32>>,
}

/// Collects every subword observed in the segmented corpora, in first-seen
/// order, after the 5 reserved specials. Id assignment is stable given
/// identical corpus order.
pub fn build_vocab(corpora: &[&Corpus], model: &BpeModel) -> Vocab {
    let mut vocab = Vocab::new_specials_only();
    let mut cache = BpeCache::new();
    for corpus in corpora {
        let mut ids = BTreeSet::new();
        for line in &corpus.lines {
            for sw in cache.segment_line(model, line) {
                ids.insert(vocab.intern(&sw));
            }
        }
        vocab
            .per_language_sets
            .entry(corpus.lang.clone())
            .or_default()
            .extend(ids);
    }
    vocab
}

impl Vocab {
    pub fn new_specials_only() -> Self {
        let id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
            per_language_sets: BTreeMap::new(),
        }
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn is_special(id: u32) -> bool {
        id < SPECIALS.len() as u32
    }

    /// True when the token id occurs in `lang`'s training corpus and in no
    /// other language's.
    pub fn is_exclusive_to(&self, id: u32, lang: &str) -> bool {
        let mut in_lang = false;
        for (l, set) in &self.per_language_sets {
            if set.contains(&id) {
                if l == lang {
                    in_lang = true;
                } else {
                    return false;
                }
            }
        }
        in_lang
    }

    pub fn encode(&self, subwords: &[String]) -> Vec<u32> {
        subwords.iter().map(|s| self.id_or_unk(s)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter_map(|&i| self.token(i).map(|s| s.to_string()))
            .collect()
    }

    /// Serialized form: "token<TAB>id<TAB>langs-csv", one line per token.
    fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.id_to_token.iter().enumerate() {
            let id = i as u32;
            let langs: Vec<&str> = self
                .per_language_sets
                .iter()
                .filter(|(_, set)| set.contains(&id))
                .map(|(l, _)| l.as_str())
                .collect();
            out.push_str(&format!("{}\t{}\t{}\n", tok, id, langs.join(",")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut id_to_token = Vec::new();
        let mut per_language_sets: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (tok, id, langs) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(i), Some(l)) => (t, i, l),
                _ => {
                    return Err(Error::Data(format!(
                        "vocab line {}: expected 'token<TAB>id<TAB>langs'",
                        no + 1
                    )))
                }
            };
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Data(format!("vocab line {}: bad id", no + 1)))?;
            if id as usize != id_to_token.len() {
                return Err(Error::Data(format!(
                    "vocab line {}: ids must be dense from 0",
                    no + 1
                )));
            }
            id_to_token.push(tok.to_string());
            for lang in langs.split(',').filter(|s| !s.is_empty()) {
                per_language_sets
                    .entry(lang.to_string())
                    .or_default()
                    .insert(id);
            }
        }
        if id_to_token.len() < SPECIALS.len() {
            return Err(Error::Data("vocab file missing special tokens".into()));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab {
            id_to_token,
            token_to_id,
            per_language_sets,
        })
    }

    /// SHA-256 over the serialized vocabulary; used to verify that a
    /// checkpoint and a vocabulary belong together.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.serialize().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bpe::bpe_learn;

    fn tiny_model() -> BpeModel {
        BpeModel {
            merges: vec![],
            continuation_marker: "@@".into(),
            num_merges: 0,
        }
    }

    #[test]
    fn disjoint_corpora_disjoint_sets() {
        let a = Corpus::from_lines("la", ["ab", "cd"]);
        let b = Corpus::from_lines("lb", ["ef", "gh"]);
        let v = build_vocab(&[&a, &b], &tiny_model());
        let sa = &v.per_language_sets["la"];
        let sb = &v.per_language_sets["lb"];
        assert!(sa.is_disjoint(sb));
    }

    #[test]
    fn shared_token_in_both_sets() {
        let a = Corpus::from_lines("la", ["x y"]);
        let b = Corpus::from_lines("lb", ["x z"]);
        let v = build_vocab(&[&a, &b], &tiny_model());
        let id = v.id("x").unwrap();
        assert!(v.per_language_sets["la"].contains(&id));
        assert!(v.per_language_sets["lb"].contains(&id));
        assert!(!v.is_exclusive_to(id, "la"));
        assert!(v.is_exclusive_to(v.id("y").unwrap(), "la"));
    }

    #[test]
    fn stable_id_assignment() {
        let a = Corpus::from_lines("la", ["abc abd", "cab"]);
        let b = Corpus::from_lines("lb", ["bca"]);
        let m = bpe_learn(&[&a, &b], 3, 10, 0).unwrap();
        let v1 = build_vocab(&[&a, &b], &m);
        let v2 = build_vocab(&[&a, &b], &m);
        assert_eq!(v1, v2);
    }

    #[test]
    fn specials_reserved() {
        let a = Corpus::from_lines("la", ["q"]);
        let v = build_vocab(&[&a], &tiny_model());
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        assert_eq!(v.id("<s>"), Some(BOS_ID));
        assert_eq!(v.id("</s>"), Some(EOS_ID));
        assert_eq!(v.id("<unk>"), Some(UNK_ID));
        assert_eq!(v.id("<mask>"), Some(MASK_ID));
        assert_eq!(v.id("q"), Some(5));
        assert_eq!(v.id_or_unk("nope"), UNK_ID);
    }

    #[test]
    fn file_round_trip_and_hash() {
        let a = Corpus::from_lines("la", ["ab cd", "ab"]);
        let b = Corpus::from_lines("lb", ["cd ef"]);
        let v = build_vocab(&[&a, &b], &tiny_model());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        let v2 = Vocab::load(&p).unwrap();
        assert_eq!(v, v2);
        assert_eq!(v.content_hash(), v2.content_hash());
    }
}
