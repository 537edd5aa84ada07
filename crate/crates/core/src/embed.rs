//! Monolingual word embeddings: skip-gram with negative sampling over
//! word-level text, exhaustive cosine nearest-neighbor queries, and the
//! word2vec-style text format.

use crate::corpus::{tokenize, Corpus};
use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EmbedCfg {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for EmbedCfg {
    fn default() -> Self {
        EmbedCfg {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 2,
            seed: 1,
        }
    }
}

impl EmbedCfg {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("embed: dim must be >= 2".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("embed: window must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("embed: learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Word -> dense vector table for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub lang: String,
    pub dim: usize,
    pub words: Vec<String>,
    index: HashMap<String, usize>,
    /// Row i is the vector of `words[i]`.
    pub matrix: Array2<f64>,
    pub trained_on_tokens: u64,
}

impl EmbeddingTable {
    pub fn new(lang: &str, words: Vec<String>, matrix: Array2<f64>, trained_on_tokens: u64) -> Result<Self> {
        if words.len() != matrix.nrows() {
            return Err(Error::Data("embedding table: word/vector count mismatch".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding table: non-finite entries".into()));
        }
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("embedding table: duplicate word '{}'", w)));
            }
        }
        Ok(EmbeddingTable {
            lang: lang.to_string(),
            dim: matrix.ncols(),
            words,
            index,
            matrix,
            trained_on_tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_of(word).map(|i| self.matrix.row(i))
    }

    /// Text format: first line "<count> <dim>", then "word v1 .. vdim".
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.matrix.row(i) {
                out.push(' ');
                out.push_str(&format!("{}", v));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(lang: &str, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("embedding file is empty".into()))?;
        let mut hp = header.split_whitespace();
        let (count, dim): (usize, usize) = match (hp.next(), hp.next()) {
            (Some(c), Some(d)) => (
                c.parse().map_err(|_| Error::Data("embedding header: bad count".into()))?,
                d.parse().map_err(|_| Error::Data("embedding header: bad dim".into()))?,
            ),
            _ => return Err(Error::Data("embedding header: expected '<count> <dim>'".into())),
        };
        let mut words = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (no, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let w = parts
                .next()
                .ok_or_else(|| Error::Data(format!("embedding line {}: empty", no + 2)))?;
            let vals: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("embedding line {}: bad float", no + 2)))?;
            if vals.len() != dim {
                return Err(Error::Data(format!(
                    "embedding line {}: expected {} values, got {}",
                    no + 2,
                    dim,
                    vals.len()
                )));
            }
            words.push(w.to_string());
            data.extend(vals);
        }
        if words.len() != count {
            return Err(Error::Data(format!(
                "embedding file: header says {} words, found {}",
                count,
                words.len()
            )));
        }
        let matrix = Array2::from_shape_vec((count, dim), data)
            .map_err(|e| Error::Data(format!("embedding file: {}", e)))?;
        Self::new(lang, words, matrix, 0)
    }
}

/// dot(u,v) / (|u||v|); rejects zero vectors and dimension mismatches.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Data(format!(
            "cosine: dimension mismatch {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Data("cosine: zero vector".into()));
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// Exhaustive k-nearest-neighbor search by cosine, descending; ties break
/// lexicographically by word.
pub fn knn(query: ArrayView1<'_, f64>, table: &EmbeddingTable, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("knn: k must be positive".into()));
    }
    let k = k.min(table.len());
    let mut scored = Vec::with_capacity(table.len());
    for (i, w) in table.words.iter().enumerate() {
        let c = cosine(query, table.matrix.row(i))?;
        scored.push((w.clone(), c));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine values are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Training result: the table plus the mean pair loss per epoch.
pub struct SkipgramRun {
    pub table: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

/// Single-threaded skip-gram with negative sampling over word tokens.
/// Negatives follow the unigram^0.75 distribution; fully deterministic for a
/// fixed seed.
pub fn train_skipgram(corpus: &Corpus, cfg: &EmbedCfg) -> Result<SkipgramRun> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("skipgram: corpus {} is empty", corpus.lang)));
    }

    // Vocabulary above min_count, ordered by (count desc, word asc).
    let mut counted: Vec<(String, u64)> = corpus
        .token_counts()
        .iter()
        .filter(|(_, &c)| c >= cfg.min_count)
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if counted.is_empty() {
        return Err(Error::Data(format!(
            "skipgram: corpus {} has no words above min_count {}",
            corpus.lang, cfg.min_count
        )));
    }
    let words: Vec<String> = counted.iter().map(|(w, _)| w.clone()).collect();
    let word_id: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();

    // Cumulative unigram^0.75 table for negative sampling.
    let pows: Vec<f64> = counted.iter().map(|(_, c)| (*c as f64).powf(0.75)).collect();
    let total_pow: f64 = pows.iter().sum();
    let mut cum = Vec::with_capacity(pows.len());
    let mut acc = 0.0;
    for p in &pows {
        acc += p / total_pow;
        cum.push(acc);
    }
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    let sample_neg = |rng: &mut ChaCha8Rng| -> usize {
        let x: f64 = rng.gen();
        cum.partition_point(|&c| c < x).min(words.len() - 1)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = words.len();
    let mut input = Array2::from_shape_fn((n, cfg.dim), |_| {
        (rng.gen::<f64>() - 0.5) / cfg.dim as f64
    });
    let mut output = Array2::<f64>::zeros((n, cfg.dim));

    // Lines as in-vocab word ids; out-of-vocab tokens are dropped.
    let lines: Vec<Vec<usize>> = corpus
        .lines
        .iter()
        .map(|l| {
            tokenize(l)
                .iter()
                .filter_map(|t| word_id.get(t.as_str()).copied())
                .collect()
        })
        .collect();
    let tokens_per_epoch: u64 = lines.iter().map(|l| l.len() as u64).sum();
    let total_tokens = tokens_per_epoch.saturating_mul(cfg.epochs as u64).max(1);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut processed: u64 = 0;
    for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_pairs = 0u64;
        for line in &lines {
            for (i, &center) in line.iter().enumerate() {
                processed += 1;
                let alpha = (cfg.learning_rate
                    * (1.0 - processed as f64 / total_tokens as f64))
                    .max(cfg.learning_rate * 1e-4);
                let span = rng.gen_range(1..=cfg.window);
                let lo = i.saturating_sub(span);
                let hi = (i + span).min(line.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = line[j];
                    // positive + negatives share one gradient buffer on the
                    // input vector
                    let mut grad_in = vec![0.0; cfg.dim];
                    for rep in 0..=cfg.negatives {
                        let (target, label) = if rep == 0 {
                            (context, 1.0)
                        } else {
                            let mut t = sample_neg(&mut rng);
                            if t == context {
                                t = sample_neg(&mut rng);
                            }
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let dot: f64 = input
                            .row(center)
                            .iter()
                            .zip(output.row(target).iter())
                            .map(|(a, b)| a * b)
                            .sum();
                        let pred = sigmoid(dot);
                        loss_sum += if label == 1.0 {
                            -(pred.max(1e-12)).ln()
                        } else {
                            -((1.0 - pred).max(1e-12)).ln()
                        };
                        let g = (label - pred) * alpha;
                        for d in 0..cfg.dim {
                            grad_in[d] += g * output[[target, d]];
                            output[[target, d]] += g * input[[center, d]];
                        }
                    }
                    loss_pairs += 1;
                    for d in 0..cfg.dim {
                        input[[center, d]] += grad_in[d];
                    }
                }
            }
        }
        epoch_losses.push(loss_sum / loss_pairs.max(1) as f64);
    }

    let table = EmbeddingTable::new(&corpus.lang, words, input, tokens_per_epoch)?;
    Ok(SkipgramRun { table, epoch_losses })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_basics() {
        let v = array![1.0, 2.0, 3.0];
        assert!((cosine(v.view(), v.view()).unwrap() - 1.0).abs() < 1e-12);
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_eq!(cosine(a.view(), b.view()).unwrap(), 0.0);
        let c = array![1.0, 1.0];
        assert!((cosine(c.view(), a.view()).unwrap() - 0.70710678).abs() < 1e-8);
        let z = array![0.0, 0.0];
        assert!(cosine(z.view(), a.view()).is_err());
        let short = array![1.0];
        assert!(cosine(short.view(), a.view()).is_err());
    }

    #[test]
    fn cosine_scale_invariance() {
        let u = array![0.3, -1.2, 0.7];
        let v = array![1.5, 0.2, -0.4];
        let base = cosine(u.view(), v.view()).unwrap();
        let u2 = u.mapv(|x| x * 3.7);
        let v2 = v.mapv(|x| x * 0.01);
        assert!((cosine(u2.view(), v2.view()).unwrap() - base).abs() < 1e-12);
    }

    fn hand_table() -> EmbeddingTable {
        let m = array![[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]];
        EmbeddingTable::new(
            "t",
            vec!["x".into(), "y".into(), "z".into()],
            m,
            0,
        )
        .unwrap()
    }

    #[test]
    fn knn_hand_ranking() {
        let t = hand_table();
        let q = array![1.0, 0.0];
        // cos(x)=1, cos(y)=0.8, cos(z)=0
        let r = knn(q.view(), &t, 3).unwrap();
        assert_eq!(r[0].0, "x");
        assert!((r[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(r[1].0, "y");
        assert!((r[1].1 - 0.8).abs() < 1e-12);
        assert_eq!(r[2].0, "z");
        assert!(knn(q.view(), &t, 0).is_err());
    }

    #[test]
    fn knn_full_table_is_permutation_and_prefix() {
        let t = hand_table();
        let q = array![0.5, 0.5];
        let all = knn(q.view(), &t, 3).unwrap();
        let mut names: Vec<&str> = all.iter().map(|(w, _)| w.as_str()).collect();
        names.sort();
        assert_eq!(names, vec!["x", "y", "z"]);
        for k in 1..=3 {
            let part = knn(q.view(), &t, k).unwrap();
            assert_eq!(part.as_slice(), &all[..k]);
        }
    }

    #[test]
    fn zero_epochs_keeps_seeded_init() {
        let corpus = Corpus::from_lines("x", vec!["a b c a b c"; 20]);
        let cfg = EmbedCfg {
            dim: 8,
            epochs: 0,
            min_count: 1,
            seed: 3,
            ..EmbedCfg::default()
        };
        let r1 = train_skipgram(&corpus, &cfg).unwrap();
        let r2 = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(r1.table.matrix, r2.table.matrix);
        assert!(r1.epoch_losses.is_empty());
        // one epoch moves the vectors
        let trained = train_skipgram(&corpus, &EmbedCfg { epochs: 1, ..cfg }).unwrap();
        assert_ne!(r1.table.matrix, trained.table.matrix);
    }

    #[test]
    fn deterministic_training() {
        let corpus = Corpus::from_lines("x", ["a b c d e", "e d c b a", "a c e b d"]);
        let cfg = EmbedCfg {
            dim: 8,
            epochs: 3,
            min_count: 1,
            seed: 9,
            ..EmbedCfg::default()
        };
        let r1 = train_skipgram(&corpus, &cfg).unwrap();
        let r2 = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(r1.table.matrix, r2.table.matrix);
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
    }

    #[test]
    fn rejects_empty_and_all_rare() {
        let empty = Corpus::from_lines("x", Vec::<String>::new());
        assert!(train_skipgram(&empty, &EmbedCfg::default()).is_err());
        let rare = Corpus::from_lines("x", ["a b c"]);
        let cfg = EmbedCfg { min_count: 2, ..EmbedCfg::default() };
        assert!(train_skipgram(&rare, &cfg).is_err());
    }

    #[test]
    fn cooccurrence_forces_neighbor() {
        // a|b and c|d co-occur strictly within separate lines; with a window
        // wider than 1 the pairs share context distributions, so b must be
        // a's nearest non-self neighbor.
        let mut lines = Vec::new();
        for _ in 0..625 {
            lines.push("a b a b a b a b".to_string());
            lines.push("c d c d c d c d".to_string());
        }
        let corpus = Corpus::from_lines("x", lines);
        assert_eq!(corpus.token_count, 10_000);
        let cfg = EmbedCfg {
            dim: 16,
            epochs: 3,
            min_count: 1,
            seed: 5,
            ..EmbedCfg::default()
        };
        let run = train_skipgram(&corpus, &cfg).unwrap();
        let q = run.table.vector("a").unwrap().to_owned();
        let top = knn(q.view(), &run.table, 2).unwrap();
        assert_eq!(top[0].0, "a");
        assert_eq!(top[1].0, "b", "expected b nearest to a, got {:?}", top);
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let mut lines = Vec::new();
        for i in 0..200 {
            lines.push(match i % 4 {
                0 => "the cat sat on the mat",
                1 => "the dog ran to the cat",
                2 => "a bird flew over the dog",
                _ => "the mat lay under a bird",
            }
            .to_string());
        }
        let corpus = Corpus::from_lines("x", lines);
        let cfg = EmbedCfg {
            dim: 16,
            epochs: 4,
            min_count: 1,
            seed: 2,
            ..EmbedCfg::default()
        };
        let run = train_skipgram(&corpus, &cfg).unwrap();
        for w in run.epoch_losses.windows(2) {
            assert!(w[1] < w[0], "epoch losses not decreasing: {:?}", run.epoch_losses);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::from_lines("x", vec!["a b c d"; 10]);
        let cfg = EmbedCfg { dim: 4, epochs: 1, min_count: 1, ..EmbedCfg::default() };
        let run = train_skipgram(&corpus, &cfg).unwrap();
        let p = dir.path().join("emb.txt");
        run.table.save(&p).unwrap();
        let loaded = EmbeddingTable::load("x", &p).unwrap();
        assert_eq!(loaded.words, run.table.words);
        assert_eq!(loaded.matrix, run.table.matrix); // shortest round-trip floats
    }
}
