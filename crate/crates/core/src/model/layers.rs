//! Forward/backward primitives for the transformer. Activations are stored
//! as (batch*time, d_model) row-major matrices; row index is b*T + t.

use super::{AttnParams, FfnParams, LnParams};
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;
pub const MASK_BIAS: f64 = -1e30;

// ---------------------------------------------------------------- linear

pub fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Returns dx and accumulates (dw, db).
pub fn linear_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    w: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dw += &x.t().dot(dy);
    *db += &dy.sum_axis(ndarray::Axis(0));
    dy.dot(&w.t())
}

// ------------------------------------------------------------- layernorm

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, p: &LnParams) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.dot(&row) / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row *= is;
        inv_std[i] = is;
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        row *= &p.gamma.view();
        row += &p.beta.view();
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    p: &LnParams,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dy_row = dy.row(i);
        let xhat = cache.xhat.row(i);
        *dgamma += &(&dy_row * &xhat);
        *dbeta += &dy_row;
        let dxhat = &dy_row * &p.gamma;
        let m1 = dxhat.sum() / d;
        let m2 = dxhat.dot(&xhat) / d;
        let dx_row = (&dxhat - m1 - &(&xhat * m2)) * cache.inv_std[i];
        dx.row_mut(i).assign(&dx_row);
    }
    dx
}

// ------------------------------------------------------------------ gelu

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v.powi(3))).tanh()))
}

pub fn gelu_backward(dy: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |g, &v| {
        let u = GELU_C * (v + GELU_A * v.powi(3));
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *g *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    });
    dx
}

// --------------------------------------------------------------- dropout

/// Inverted dropout; the mask doubles as the backward multiplier.
pub fn dropout(x: &mut Array2<f64>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    *x *= &mask;
    Some(mask)
}

pub fn dropout_backward(dy: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *dy *= m;
    }
}

// ------------------------------------------------------------- attention

/// Additive attention bias per batch row: 0.0 where attending is allowed,
/// MASK_BIAS where it is not.
pub fn key_padding_bias(lengths: &[usize], t_q: usize, t_k: usize, causal: bool) -> Vec<Array2<f64>> {
    lengths
        .iter()
        .map(|&len| {
            Array2::from_shape_fn((t_q, t_k), |(i, j)| {
                if j >= len || (causal && j > i) {
                    MASK_BIAS
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Cross-attention bias uses the KEY side's lengths.
pub fn cross_bias(src_lengths: &[usize], t_q: usize, t_k: usize) -> Vec<Array2<f64>> {
    key_padding_bias(src_lengths, t_q, t_k, false)
}

pub struct AttnCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmax probabilities per (batch, head), indexed b*n_heads + h.
    pub probs: Vec<Array2<f64>>,
    /// Head-concatenated context (input of the output projection).
    pub concat: Array2<f64>,
    pub drop_mask: Option<Array2<f64>>,
}

pub struct AttnShape {
    pub batch: usize,
    pub t_q: usize,
    pub t_k: usize,
    pub n_heads: usize,
    pub head_dim: usize,
}

/// Multi-head attention: queries from `xq` (B*Tq, D), keys/values from `xk`
/// (B*Tk, D). `bias[b]` is added to the (Tq, Tk) score matrix of batch b.
pub fn attention(
    xq: &Array2<f64>,
    xk: &Array2<f64>,
    p: &AttnParams,
    bias: &[Array2<f64>],
    shape: &AttnShape,
    drop_rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, AttnCache) {
    let q = linear(xq, &p.wq, &p.bq);
    let k = linear(xk, &p.wk, &p.bk);
    let v = linear(xk, &p.wv, &p.bv);
    let scale = 1.0 / (shape.head_dim as f64).sqrt();

    let mut concat = Array2::zeros((shape.batch * shape.t_q, shape.n_heads * shape.head_dim));
    let mut probs = Vec::with_capacity(shape.batch * shape.n_heads);
    for b in 0..shape.batch {
        let qrows = b * shape.t_q..(b + 1) * shape.t_q;
        let krows = b * shape.t_k..(b + 1) * shape.t_k;
        for h in 0..shape.n_heads {
            let cols = h * shape.head_dim..(h + 1) * shape.head_dim;
            let qb = q.slice(s![qrows.clone(), cols.clone()]);
            let kb = k.slice(s![krows.clone(), cols.clone()]);
            let vb = v.slice(s![krows.clone(), cols.clone()]);
            let mut scores = qb.dot(&kb.t());
            scores *= scale;
            scores += &bias[b];
            softmax_rows(&mut scores);
            let ctx = scores.dot(&vb);
            concat.slice_mut(s![qrows.clone(), cols]).assign(&ctx);
            probs.push(scores);
        }
    }
    let mut out = linear(&concat, &p.wo, &p.bo);
    let drop_mask = dropout(&mut out, drop_rate, rng);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            probs,
            concat,
            drop_mask,
        },
    )
}

/// Returns (d_xq, d_xk) and accumulates parameter gradients.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dy: &Array2<f64>,
    xq: &Array2<f64>,
    xk: &Array2<f64>,
    p: &AttnParams,
    g: &mut AttnParams,
    cache: &AttnCache,
    shape: &AttnShape,
) -> (Array2<f64>, Array2<f64>) {
    let mut dy = dy.clone();
    dropout_backward(&mut dy, &cache.drop_mask);
    let d_concat = linear_backward(&dy, &cache.concat, &p.wo, &mut g.wo, &mut g.bo);

    let scale = 1.0 / (shape.head_dim as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for b in 0..shape.batch {
        let qrows = b * shape.t_q..(b + 1) * shape.t_q;
        let krows = b * shape.t_k..(b + 1) * shape.t_k;
        for h in 0..shape.n_heads {
            let cols = h * shape.head_dim..(h + 1) * shape.head_dim;
            let probs = &cache.probs[b * shape.n_heads + h];
            let d_ctx = d_concat.slice(s![qrows.clone(), cols.clone()]);
            let vb = cache.v.slice(s![krows.clone(), cols.clone()]);
            let kb = cache.k.slice(s![krows.clone(), cols.clone()]);
            let qb = cache.q.slice(s![qrows.clone(), cols.clone()]);

            let mut d_probs = d_ctx.dot(&vb.t());
            let d_vb = probs.t().dot(&d_ctx);
            // softmax backward per row
            for i in 0..d_probs.nrows() {
                let p_row = probs.row(i);
                let dot = d_probs.row(i).dot(&p_row);
                let mut dp = d_probs.row_mut(i);
                for j in 0..dp.len() {
                    dp[j] = p_row[j] * (dp[j] - dot);
                }
            }
            d_probs *= scale;
            let d_qb = d_probs.dot(&kb);
            let d_kb = d_probs.t().dot(&qb);

            dq.slice_mut(s![qrows.clone(), cols.clone()]).assign(&d_qb);
            dk.slice_mut(s![krows.clone(), cols.clone()]).assign(&d_kb);
            dv.slice_mut(s![krows.clone(), cols]).assign(&d_vb);
        }
    }
    let d_xq = linear_backward(&dq, xq, &p.wq, &mut g.wq, &mut g.bq);
    let mut d_xk = linear_backward(&dk, xk, &p.wk, &mut g.wk, &mut g.bk);
    d_xk += &linear_backward(&dv, xk, &p.wv, &mut g.wv, &mut g.bv);
    (d_xq, d_xk)
}

// ----------------------------------------------------------------- ffn

pub struct FfnCache {
    pub x: Array2<f64>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
    pub drop_mask: Option<Array2<f64>>,
}

pub fn ffn(
    x: &Array2<f64>,
    p: &FfnParams,
    drop_rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, FfnCache) {
    let pre = linear(x, &p.w1, &p.b1);
    let act = gelu(&pre);
    let mut out = linear(&act, &p.w2, &p.b2);
    let drop_mask = dropout(&mut out, drop_rate, rng);
    (
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
            drop_mask,
        },
    )
}

pub fn ffn_backward(
    dy: &Array2<f64>,
    p: &FfnParams,
    g: &mut FfnParams,
    cache: &FfnCache,
) -> Array2<f64> {
    let mut dy = dy.clone();
    dropout_backward(&mut dy, &cache.drop_mask);
    let d_act = linear_backward(&dy, &cache.act, &p.w2, &mut g.w2, &mut g.b2);
    let d_pre = gelu_backward(&d_act, &cache.pre);
    linear_backward(&d_pre, &cache.x, &p.w1, &mut g.w1, &mut g.b1)
}

// -------------------------------------------------------------- softmax

/// In-place row softmax; rows containing MASK_BIAS entries end exactly zero
/// there.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_are_stochastic() {
        let mut m = array![[1.0, 2.0, 3.0], [0.0, MASK_BIAS, 0.0]];
        softmax_rows(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m[[1, 1]], 0.0);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let p = LnParams {
            gamma: Array1::ones(4),
            beta: Array1::zeros(4),
        };
        let x = array![[1.0, 2.0, 3.0, 4.0], [-2.0, 0.0, 2.0, 8.0]];
        let (y, _) = layer_norm(&x, &p);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-9);
            let var = row.dot(&row) / 4.0;
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn causal_bias_blocks_future() {
        let bias = key_padding_bias(&[3], 3, 3, true);
        assert_eq!(bias[0][[0, 1]], MASK_BIAS);
        assert_eq!(bias[0][[1, 1]], 0.0);
        assert_eq!(bias[0][[2, 0]], 0.0);
        let pad = key_padding_bias(&[2], 3, 3, false);
        assert_eq!(pad[0][[0, 2]], MASK_BIAS);
        assert_eq!(pad[0][[0, 1]], 0.0);
    }
}
