//! Elementwise functions, layer normalization, positional encoding and
//! losses.

use ndarray::{Array1, Axis};
use rand::Rng;

use super::Tensor;

pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit: returns `(loss, dloss/dlogit)`.
pub fn bce_with_logit(logit: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

/// Softmax cross-entropy for one example: `(loss, probs, dloss/dlogits)`.
pub fn softmax_xent(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - max).exp());
    let z: f64 = exps.sum();
    let probs = exps / z;
    let log_z = z.ln() + max;
    let loss = log_z - logits[label];
    let mut d = probs.clone();
    d[label] -= 1.0;
    (loss, probs, d)
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalization with gain `gamma` and bias `beta` (`1 x d`).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, LayerNormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(dy: &Tensor, gamma: &Tensor, cache: &LayerNormCache) -> (Tensor, Tensor, Tensor) {
    let d = dy.ncols() as f64;
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gamma;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let dx = (&dxhat
        - &mean_dxhat.view().insert_axis(Axis(1))
        - &(&cache.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1))))
        * cache.inv_std.view().insert_axis(Axis(1));
    (dx, dgamma, dbeta)
}

/// Sinusoidal positions: even columns sine, odd columns cosine.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    Tensor::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
}
