//! Scaled dot-product attention and multi-head attention.

use ndarray::{s, Axis};
use rand::Rng;

use super::store::glorot;
use super::{shape_err, NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub context: Tensor,
    pub weights: Tensor,
}

/// Row softmax. Keys with `mask[j] == false` get weight exactly 0; a row
/// whose keys are all masked falls back to attending every key.
pub fn softmax_rows(scores: &Tensor, key_mask: Option<&[bool]>) -> Tensor {
    let mask = key_mask.filter(|m| m.iter().any(|&v| v));
    let mut out = Tensor::zeros(scores.raw_dim());
    for (src, mut dst) in scores.rows().into_iter().zip(out.rows_mut()) {
        let valid = |j: usize| mask.is_none_or(|m| m[j]);
        let max = src
            .iter()
            .enumerate()
            .filter(|(j, _)| valid(*j))
            .fold(f64::NEG_INFINITY, |a, (_, &b)| a.max(b));
        let mut z = 0.0;
        for (j, (&s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
            if valid(j) {
                *d = (s - max).exp();
                z += *d;
            }
        }
        dst.mapv_inplace(|v| v / z);
    }
    out
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` with an optional key mask.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    key_mask: Option<&[bool]>,
) -> Result<AttentionOutput, NnError> {
    let d_k = q.ncols();
    if d_k == 0 {
        return Err(NnError::ZeroKeyDim);
    }
    if k.ncols() != d_k {
        return Err(shape_err("K columns", d_k, k.ncols()));
    }
    if k.nrows() != v.nrows() {
        return Err(shape_err("V rows", k.nrows(), v.nrows()));
    }
    if let Some(m) = key_mask {
        if m.len() != k.nrows() {
            return Err(shape_err("key mask length", k.nrows(), m.len()));
        }
    }
    let scores = q.dot(&k.t()) / (d_k as f64).sqrt();
    let weights = softmax_rows(&scores, key_mask);
    let context = weights.dot(v);
    Ok(AttentionOutput { context, weights })
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
}

pub fn scaled_dot_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    weights: &Tensor,
    d_context: &Tensor,
) -> AttentionGrads {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let dv = weights.t().dot(d_context);
    let dw = d_context.dot(&v.t());
    let row_dot = (&dw * weights).sum_axis(Axis(1)).insert_axis(Axis(1));
    let ds = weights * &(&dw - &row_dot);
    let dq = ds.dot(k) * scale;
    let dk = ds.t().dot(q) * scale;
    AttentionGrads { dq, dk, dv }
}

/// Per-head projections `W_i^Q, W_i^K, W_i^V` and the output projection `W^O`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
}

impl MultiHeadParams {
    /// `heads` heads of width `d_model / heads`, Glorot initialized.
    pub fn random<R: Rng>(rng: &mut R, d_model: usize, heads: usize) -> Result<Self, NnError> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(NnError::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        let d_head = d_model / heads;
        let mut proj = || (0..heads).map(|_| glorot(rng, d_model, d_head)).collect::<Vec<_>>();
        let w_q = proj();
        let w_k = proj();
        let w_v = proj();
        let w_o = glorot(rng, d_model, d_model);
        Ok(MultiHeadParams { w_q, w_k, w_v, w_o })
    }

    /// One head, every projection the identity.
    pub fn identity(d_model: usize) -> Self {
        let eye = Tensor::eye(d_model);
        MultiHeadParams {
            w_q: vec![eye.clone()],
            w_k: vec![eye.clone()],
            w_v: vec![eye.clone()],
            w_o: eye,
        }
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    fn validate(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(), NnError> {
        let h = self.heads();
        if h == 0 {
            return Err(NnError::Config("multi-head attention needs at least one head".into()));
        }
        if self.w_k.len() != h || self.w_v.len() != h {
            return Err(shape_err("projection head count", h, (self.w_k.len(), self.w_v.len())));
        }
        let mut concat_width = 0;
        for i in 0..h {
            let (wq, wk, wv) = (&self.w_q[i], &self.w_k[i], &self.w_v[i]);
            if wq.nrows() != q.ncols() {
                return Err(shape_err(format!("W_q[{i}] rows"), q.ncols(), wq.nrows()));
            }
            if wk.nrows() != k.ncols() {
                return Err(shape_err(format!("W_k[{i}] rows"), k.ncols(), wk.nrows()));
            }
            if wv.nrows() != v.ncols() {
                return Err(shape_err(format!("W_v[{i}] rows"), v.ncols(), wv.nrows()));
            }
            if wk.ncols() != wq.ncols() {
                return Err(shape_err(format!("W_k[{i}] columns"), wq.ncols(), wk.ncols()));
            }
            concat_width += wv.ncols();
        }
        if self.w_o.nrows() != concat_width {
            return Err(shape_err("W_o rows", concat_width, self.w_o.nrows()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadCache {
    pub q_heads: Vec<Tensor>,
    pub k_heads: Vec<Tensor>,
    pub v_heads: Vec<Tensor>,
    pub heads: Vec<AttentionOutput>,
    pub concat: Tensor,
}

/// `Concat(head_1..head_h) W^O` with `head_i = Attention(Q W_i^Q, K W_i^K, V W_i^V)`.
pub fn multi_head(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    params: &MultiHeadParams,
    key_mask: Option<&[bool]>,
) -> Result<(Tensor, MultiHeadCache), NnError> {
    params.validate(q, k, v)?;
    let h = params.heads();
    let mut cache = MultiHeadCache {
        q_heads: Vec::with_capacity(h),
        k_heads: Vec::with_capacity(h),
        v_heads: Vec::with_capacity(h),
        heads: Vec::with_capacity(h),
        concat: Tensor::zeros((0, 0)),
    };
    for i in 0..h {
        let qh = q.dot(&params.w_q[i]);
        let kh = k.dot(&params.w_k[i]);
        let vh = v.dot(&params.w_v[i]);
        let out = scaled_dot_attention(&qh, &kh, &vh, key_mask)?;
        cache.q_heads.push(qh);
        cache.k_heads.push(kh);
        cache.v_heads.push(vh);
        cache.heads.push(out);
    }
    let views: Vec<_> = cache.heads.iter().map(|o| o.context.view()).collect();
    cache.concat = ndarray::concatenate(Axis(1), &views).expect("head rows agree");
    let output = cache.concat.dot(&params.w_o);
    Ok((output, cache))
}

#[derive(Debug, Clone)]
pub struct MultiHeadGrads {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
}

pub fn multi_head_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    params: &MultiHeadParams,
    cache: &MultiHeadCache,
    d_out: &Tensor,
) -> MultiHeadGrads {
    let w_o = cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&params.w_o.t());
    let mut grads = MultiHeadGrads {
        dq: Tensor::zeros(q.raw_dim()),
        dk: Tensor::zeros(k.raw_dim()),
        dv: Tensor::zeros(v.raw_dim()),
        w_q: Vec::new(),
        w_k: Vec::new(),
        w_v: Vec::new(),
        w_o,
    };
    let mut col = 0;
    for i in 0..params.heads() {
        let width = cache.heads[i].context.ncols();
        let d_ctx = d_concat.slice(s![.., col..col + width]).to_owned();
        col += width;
        let g = scaled_dot_attention_backward(
            &cache.q_heads[i],
            &cache.k_heads[i],
            &cache.v_heads[i],
            &cache.heads[i].weights,
            &d_ctx,
        );
        grads.w_q.push(q.t().dot(&g.dq));
        grads.w_k.push(k.t().dot(&g.dk));
        grads.w_v.push(v.t().dot(&g.dv));
        grads.dq += &g.dq.dot(&params.w_q[i].t());
        grads.dk += &g.dk.dot(&params.w_k[i].t());
        grads.dv += &g.dv.dot(&params.w_v[i].t());
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_element() {
        let x = array![[2.0]];
        let out = scaled_dot_attention(&x, &x, &x, None).unwrap();
        assert_eq!(out.context, array![[2.0]]);
        assert_eq!(out.weights, array![[1.0]]);
    }

    #[test]
    fn zero_queries_attend_uniformly() {
        let q = Tensor::zeros((2, 3));
        let k = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        let v = array![[1.0, 4.0], [3.0, 0.0]];
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.weights, array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(out.context, array![[2.0, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn zero_key_dim_is_an_error() {
        let q = Tensor::zeros((2, 0));
        assert!(matches!(
            scaled_dot_attention(&q, &q, &Tensor::zeros((2, 1)), None),
            Err(NnError::ZeroKeyDim)
        ));
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let k = array![[1.0, 1.0], [5.0, 5.0], [0.0, 2.0]];
        let v = array![[1.0], [100.0], [2.0]];
        let out = scaled_dot_attention(&q, &k, &v, Some(&[true, false, true])).unwrap();
        assert_eq!(out.weights[[0, 1]], 0.0);
        assert_eq!(out.weights[[1, 1]], 0.0);
        // all-masked rows fall back to every key
        let out = scaled_dot_attention(&q, &k, &v, Some(&[false, false, false])).unwrap();
        assert!((out.weights.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_multi_head_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = super::super::store::uniform(&mut rng, 4, 6, 1.0);
        let (out, _) = multi_head(&x, &x, &x, &MultiHeadParams::identity(6), None).unwrap();
        let plain = scaled_dot_attention(&x, &x, &x, None).unwrap();
        assert_eq!(out, plain.context);
    }

    #[test]
    fn zero_output_projection_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = super::super::store::uniform(&mut rng, 3, 4, 1.0);
        let mut p = MultiHeadParams::random(&mut rng, 4, 2).unwrap();
        p.w_o.fill(0.0);
        let (out, _) = multi_head(&x, &x, &x, &p, None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::zeros((3, 4));
        let mut p = MultiHeadParams::random(&mut rng, 4, 2).unwrap();
        p.w_v[1] = Tensor::zeros((3, 2));
        let err = multi_head(&x, &x, &x, &p, None).unwrap_err();
        assert!(err.to_string().contains("W_v[1]"), "{err}");
        assert!(MultiHeadParams::random(&mut rng, 5, 2).is_err());
    }
}
