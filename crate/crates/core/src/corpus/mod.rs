//! Corpus ingestion, tokenization and frequency statistics.

mod bpe;
mod synth;
mod vocab;

pub use bpe::{bpe_apply, bpe_decode, bpe_learn, BpeCache, BpeModel, DEFAULT_MARKER};
pub use synth::{
    gen_synth_family, MultiParallel, SynthFamily, SynthFamilySpec, SynthSizes, WordCiphers,
};
pub use vocab::{build_vocab, Vocab, BOS_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID};

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

/// Splits on whitespace, then peels leading/trailing punctuation characters
/// off into their own tokens. Deterministic; empty input yields no tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let chars: Vec<char> = piece.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        while start < end && is_punct(chars[start]) {
            leading.push(chars[start].to_string());
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && is_punct(chars[end - 1]) {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        out.extend(leading);
        if end > start {
            out.push(chars[start..end].iter().collect());
        }
        trailing.reverse();
        out.extend(trailing);
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '¿' | '¡' | '«' | '»' | '„' | '“' | '”' | '‚' | '‘' | '’' | '…')
}

/// A monolingual corpus: one sentence per line, plus cached token statistics.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub lang: String,
    pub lines: Vec<String>,
    pub token_count: u64,
    counts: HashMap<String, u64>,
}

impl Corpus {
    /// Builds a corpus from sentences, dropping empty lines.
    pub fn from_lines<I, S>(lang: &str, lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lines: Vec<String> = lines
            .into_iter()
            .map(Into::into)
            .filter(|l| !l.trim().is_empty())
            .collect();
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut token_count = 0u64;
        for line in &lines {
            for tok in tokenize(line) {
                *counts.entry(tok).or_insert(0) += 1;
                token_count += 1;
            }
        }
        Corpus {
            lang: lang.to_string(),
            lines,
            token_count,
            counts,
        }
    }

    /// Loads a one-sentence-per-line UTF-8 file.
    pub fn load(lang: &str, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_lines(lang, text.lines()))
    }

    /// Writes the corpus back out, LF line endings.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.lines.join("\n");
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn occurrences(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// Token-level counts over the whole corpus.
    pub fn token_counts(&self) -> &HashMap<String, u64> {
        &self.counts
    }

    /// Fraction of the corpus' tokens equal to `token`.
    pub fn freq_fraction(&self, token: &str) -> Result<f64> {
        if self.token_count == 0 {
            return Err(Error::Data(format!(
                "corpus {} has no tokens; frequency undefined",
                self.lang
            )));
        }
        Ok(self.occurrences(token) as f64 / self.token_count as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }
}

/// Line-aligned parallel data for one language pair.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl ParallelCorpus {
    pub fn new(src_lang: &str, tgt_lang: &str, src: Vec<String>, tgt: Vec<String>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::Data(format!(
                "parallel corpus {}-{}: {} vs {} lines",
                src_lang,
                tgt_lang,
                src.len(),
                tgt.len()
            )));
        }
        Ok(ParallelCorpus {
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
            src,
            tgt,
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// The same data with source and target sides swapped.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            src_lang: self.tgt_lang.clone(),
            tgt_lang: self.src_lang.clone(),
            src: self.tgt.clone(),
            tgt: self.src.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_whitespace_split() {
        assert_eq!(tokenize("a b"), vec!["a", "b"]);
    }

    #[test]
    fn tokenize_punctuation() {
        assert_eq!(tokenize("a, b."), vec!["a", ",", "b", "."]);
    }

    #[test]
    fn tokenize_leading_and_nested() {
        assert_eq!(tokenize("\"hi!\" there"), vec!["\"", "hi", "!", "\"", "there"]);
        // all-punctuation piece
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
    }

    #[test]
    fn corpus_counts() {
        let c = Corpus::from_lines("x", ["a b a", "", "a ."]);
        assert_eq!(c.lines.len(), 2); // empty line dropped
        assert_eq!(c.token_count, 5);
        assert_eq!(c.occurrences("a"), 3);
        assert_eq!(c.occurrences("zz"), 0);
    }

    #[test]
    fn freq_fraction_cases() {
        let c = Corpus::from_lines("x", ["a b a b b"]);
        assert_eq!(c.freq_fraction("zz").unwrap(), 0.0);
        assert!((c.freq_fraction("a").unwrap() - 0.4).abs() < 1e-12);
        let empty = Corpus::from_lines("x", Vec::<String>::new());
        assert!(empty.freq_fraction("a").is_err());
    }

    #[test]
    fn freq_fraction_threshold_arithmetic() {
        // 11 occurrences in 1e6 tokens -> 1.1e-5 (> 1e-5); 10 -> exactly 1e-5.
        let mut lines = vec!["filler".to_string(); 999_989];
        lines.extend(vec!["hot".to_string(); 11]);
        let c = Corpus::from_lines("x", lines);
        assert_eq!(c.token_count, 1_000_000);
        let f = c.freq_fraction("hot").unwrap();
        assert!((f - 1.1e-5).abs() < 1e-15);
        assert!(f > 1e-5);

        let mut lines = vec!["filler".to_string(); 999_990];
        lines.extend(vec!["hot".to_string(); 10]);
        let c = Corpus::from_lines("x", lines);
        let f = c.freq_fraction("hot").unwrap();
        assert!((f - 1.0e-5).abs() < 1e-15);
        assert!(f <= 1e-5);
    }

    #[test]
    fn freq_fractions_sum_to_one() {
        let c = Corpus::from_lines("x", ["a b c a", "d d e ."]);
        let total: f64 = c
            .token_counts()
            .keys()
            .map(|t| c.freq_fraction(t).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
