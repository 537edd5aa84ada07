//! Cross-lingual embedding alignment: orthogonal Procrustes on a seed
//! lexicon of identically spelled words, optionally grown by mutual
//! nearest-neighbor self-learning.

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

/// Word pairs used as alignment supervision; sources are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedLexicon {
    pub pairs: Vec<(String, String)>,
}

impl SeedLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (s, _) in &pairs {
            if !seen.insert(s.clone()) {
                return Err(Error::Data(format!("seed lexicon: duplicate source '{}'", s)));
            }
        }
        Ok(SeedLexicon { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// "src<TAB>tgt" per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (s, t) in &self.pairs {
            out.push_str(&format!("{}\t{}\n", s, t));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("lexicon line {}: expected 'src<TAB>tgt'", no + 1)))?;
            pairs.push((s.to_string(), t.to_string()));
        }
        SeedLexicon::new(pairs)
    }
}

/// Orthogonal map from the source embedding space into the target space.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoMap {
    pub matrix: Array2<f64>,
}

impl OrthoMap {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Frobenius norm of WᵀW − I.
    pub fn orthogonality_defect(&self) -> f64 {
        let wtw = self.matrix.t().dot(&self.matrix);
        let mut sum = 0.0;
        for i in 0..wtw.nrows() {
            for j in 0..wtw.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                sum += (wtw[[i, j]] - target).powi(2);
            }
        }
        sum.sqrt()
    }

    /// Maps every row of the table into the target space.
    pub fn apply_table(&self, table: &EmbeddingTable) -> Result<EmbeddingTable> {
        if table.dim != self.dim() {
            return Err(Error::Data(format!(
                "ortho map dim {} does not match table dim {}",
                self.dim(),
                table.dim
            )));
        }
        let mapped = table.matrix.dot(&self.matrix);
        EmbeddingTable::new(&table.lang, table.words.clone(), mapped, table.trained_on_tokens)
    }

    /// File format: first line "dim", then dim rows of dim reals.
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let mut out = format!("{}\n", d);
        for i in 0..d {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{}", v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let d: usize = lines
            .next()
            .ok_or_else(|| Error::Data("ortho map file is empty".into()))?
            .trim()
            .parse()
            .map_err(|_| Error::Data("ortho map: bad dim header".into()))?;
        let mut data = Vec::with_capacity(d * d);
        for _ in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data("ortho map: truncated".into()))?;
            for v in line.split_whitespace() {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Data("ortho map: bad float".into()))?,
                );
            }
        }
        let matrix = Array2::from_shape_vec((d, d), data)
            .map_err(|e| Error::Data(format!("ortho map: {}", e)))?;
        Ok(OrthoMap { matrix })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AlignCfg {
    pub max_iters: usize,
    /// Stop once the induced dictionary changes by less than this fraction.
    pub convergence: f64,
    /// Apply the unit-length -> mean-center -> unit-length recipe first.
    pub normalize: bool,
}

impl Default for AlignCfg {
    fn default() -> Self {
        AlignCfg {
            max_iters: 20,
            convergence: 0.01,
            normalize: true,
        }
    }
}

/// Pairs (w, w) for every word spelled identically in both tables.
pub fn seed_identical(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<SeedLexicon> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("seed_identical: empty embedding table".into()));
    }
    let bset: BTreeSet<&String> = b.words.iter().collect();
    let mut shared: Vec<String> = a
        .words
        .iter()
        .filter(|w| bset.contains(w))
        .cloned()
        .collect();
    shared.sort();
    if shared.is_empty() {
        return Err(Error::Data(
            "seed_identical: no identically spelled words; self-learning cannot start".into(),
        ));
    }
    SeedLexicon::new(shared.into_iter().map(|w| (w.clone(), w)).collect())
}

/// The unit-length -> mean-center -> unit-length preprocessing shared by all
/// alignment steps.
pub fn normalize_table(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let mut m = table.matrix.clone();
    unit_rows(&mut m)?;
    let mean: Array1<f64> = m.mean_axis(ndarray::Axis(0)).expect("nonempty table");
    for mut row in m.rows_mut() {
        row -= &mean;
    }
    unit_rows(&mut m)?;
    EmbeddingTable::new(&table.lang, table.words.clone(), m, table.trained_on_tokens)
}

fn unit_rows(m: &mut Array2<f64>) -> Result<()> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            return Err(Error::Data("normalize: zero vector row".into()));
        }
        row /= n;
    }
    Ok(())
}

/// Closed-form orthogonal Procrustes: W = U·Vᵀ for Xᵀ·Y = U·Σ·Vᵀ, where X
/// and Y stack the row-unit-normalized source/target vectors of `pairs`.
pub fn procrustes(src: &EmbeddingTable, tgt: &EmbeddingTable, pairs: &SeedLexicon) -> Result<OrthoMap> {
    if pairs.is_empty() {
        return Err(Error::Data("procrustes: empty pair list".into()));
    }
    if src.dim != tgt.dim {
        return Err(Error::Data("procrustes: dimension mismatch".into()));
    }
    let d = src.dim;
    let n = pairs.len();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Array2::<f64>::zeros((n, d));
    for (k, (s, t)) in pairs.pairs.iter().enumerate() {
        let sv = src
            .vector(s)
            .ok_or_else(|| Error::Data(format!("procrustes: '{}' missing from source table", s)))?;
        let tv = tgt
            .vector(t)
            .ok_or_else(|| Error::Data(format!("procrustes: '{}' missing from target table", t)))?;
        x.row_mut(k).assign(&sv);
        y.row_mut(k).assign(&tv);
    }
    unit_rows(&mut x)?;
    unit_rows(&mut y)?;
    if all_rows_identical(&x) || all_rows_identical(&y) {
        return Err(Error::Data(
            "procrustes: degenerate input (all pair vectors identical)".into(),
        ));
    }

    let m = x.t().dot(&y);
    let m_na = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let svd = m_na.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Data("procrustes: SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Data("procrustes: SVD failed".into()))?;
    let w_na = u * v_t;
    let matrix = Array2::from_shape_fn((d, d), |(i, j)| w_na[(i, j)]);
    Ok(OrthoMap { matrix })
}

fn all_rows_identical(m: &Array2<f64>) -> bool {
    if m.nrows() < 2 {
        return true;
    }
    let first = m.row(0);
    m.rows().into_iter().all(|r| r == first)
}

/// Result of iterative self-learning, including the normalized tables the
/// map applies to and the induced dictionary's size per iteration.
pub struct AlignResult {
    pub map: OrthoMap,
    pub dictionary: Vec<(String, String)>,
    pub src_normalized: EmbeddingTable,
    pub tgt_normalized: EmbeddingTable,
    pub dict_sizes: Vec<usize>,
}

/// Alternates Procrustes on the current dictionary with mutual
/// nearest-neighbor re-induction until the dictionary stabilizes.
pub fn self_learn(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    seed: &SeedLexicon,
    cfg: &AlignCfg,
) -> Result<AlignResult> {
    if seed.is_empty() {
        return Err(Error::Data("self_learn: empty seed lexicon".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Config("self_learn: max_iters must be >= 1".into()));
    }
    let (src_n, tgt_n) = if cfg.normalize {
        (normalize_table(src)?, normalize_table(tgt)?)
    } else {
        (src.clone(), tgt.clone())
    };

    let mut dict = seed.clone();
    let mut map = procrustes(&src_n, &tgt_n, &dict)?;
    let mut dict_sizes = Vec::new();
    for iter in 0..cfg.max_iters {
        if iter > 0 {
            map = procrustes(&src_n, &tgt_n, &dict)?;
        }
        let induced = induce_mutual_nn(&src_n, &tgt_n, &map)?;
        dict_sizes.push(induced.len());
        let change = dict_change_fraction(&dict.pairs, &induced);
        dict = SeedLexicon::new(induced)?;
        if change < cfg.convergence {
            break;
        }
    }
    Ok(AlignResult {
        map,
        dictionary: dict.pairs,
        src_normalized: src_n,
        tgt_normalized: tgt_n,
        dict_sizes,
    })
}

/// Mutual cosine nearest neighbors under the current map, sorted by source
/// word. Ties break toward the lexicographically smaller word.
fn induce_mutual_nn(
    src_n: &EmbeddingTable,
    tgt_n: &EmbeddingTable,
    map: &OrthoMap,
) -> Result<Vec<(String, String)>> {
    let mapped = src_n.matrix.dot(&map.matrix);
    // rows are unit length (orthogonal map preserves norms), so dot = cosine
    let scores = mapped.dot(&tgt_n.matrix.t());
    let n_s = scores.nrows();
    let n_t = scores.ncols();

    let mut best_t = vec![0usize; n_s];
    for i in 0..n_s {
        let mut arg = 0;
        for j in 1..n_t {
            if better(scores[[i, j]], &tgt_n.words[j], scores[[i, arg]], &tgt_n.words[arg]) {
                arg = j;
            }
        }
        best_t[i] = arg;
    }
    let mut best_s = vec![0usize; n_t];
    for j in 0..n_t {
        let mut arg = 0;
        for i in 1..n_s {
            if better(scores[[i, j]], &src_n.words[i], scores[[arg, j]], &src_n.words[arg]) {
                arg = i;
            }
        }
        best_s[j] = arg;
    }

    let mut pairs: Vec<(String, String)> = (0..n_s)
        .filter(|&i| best_s[best_t[i]] == i)
        .map(|i| (src_n.words[i].clone(), tgt_n.words[best_t[i]].clone()))
        .collect();
    pairs.sort();
    Ok(pairs)
}

fn better(score: f64, word: &str, best_score: f64, best_word: &str) -> bool {
    score > best_score || (score == best_score && word < best_word)
}

fn dict_change_fraction(old: &[(String, String)], new: &[(String, String)]) -> f64 {
    let old_set: BTreeSet<&(String, String)> = old.iter().collect();
    let common = new.iter().filter(|p| old_set.contains(p)).count();
    let denom = old.len().max(new.len()).max(1);
    1.0 - common as f64 / denom as f64
}
