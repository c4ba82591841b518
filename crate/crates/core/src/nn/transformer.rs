//! Scaled embedding + positions -> one encoder block -> masked mean pool -> softmax.

use ndarray::{Array1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head, multi_head_backward, MultiHeadCache, MultiHeadParams};
use super::bigru::{embed, scatter_embedding};
use super::layers::{
    dropout_mask, layer_norm, layer_norm_backward, positional_encoding, softmax_xent,
    LayerNormCache,
};
use super::model::{valid_len, ModelConfig, Output};
use super::store::{glorot, ParamStore};
use super::{NnError, Tensor};

pub(crate) fn init<R: Rng>(
    store: &mut ParamStore,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<(), NnError> {
    let (e, f) = (config.embed_dim, config.ff_dim);
    let mha = MultiHeadParams::random(rng, e, config.heads)?;
    store_mha(store, &mha);
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{ln}.gamma"), Tensor::ones((1, e)));
        store.insert(format!("{ln}.beta"), Tensor::zeros((1, e)));
    }
    store.insert("ffn.w1", glorot(rng, e, f));
    store.insert("ffn.b1", Tensor::zeros((1, f)));
    store.insert("ffn.w2", glorot(rng, f, e));
    store.insert("ffn.b2", Tensor::zeros((1, e)));
    store.insert("out_w", glorot(rng, e, 2));
    store.insert("out_b", Tensor::zeros((1, 2)));
    Ok(())
}

fn store_mha(store: &mut ParamStore, mha: &MultiHeadParams) {
    for i in 0..mha.heads() {
        store.insert(format!("mha.w_q.{i}"), mha.w_q[i].clone());
        store.insert(format!("mha.w_k.{i}"), mha.w_k[i].clone());
        store.insert(format!("mha.w_v.{i}"), mha.w_v[i].clone());
    }
    store.insert("mha.w_o", mha.w_o.clone());
}

fn load_mha(store: &ParamStore, heads: usize) -> MultiHeadParams {
    let take = |p: &str| (0..heads).map(|i| store.get(&format!("mha.{p}.{i}")).clone()).collect();
    MultiHeadParams {
        w_q: take("w_q"),
        w_k: take("w_k"),
        w_v: take("w_v"),
        w_o: store.get("mha.w_o").clone(),
    }
}

pub(crate) struct Cache {
    x0: Tensor,
    mha: MultiHeadParams,
    mha_cache: MultiHeadCache,
    drop1: Option<Tensor>,
    ln1: LayerNormCache,
    x1: Tensor,
    h_pre: Tensor,
    h_act: Tensor,
    drop2: Option<Tensor>,
    ln2: LayerNormCache,
    pool_rows: usize,
    pooled: Tensor,
    logits: Array1<f64>,
}

fn apply(mask: &Option<Tensor>, t: Tensor) -> Tensor {
    match mask {
        Some(m) => t * m,
        None => t,
    }
}

pub(crate) fn forward(
    params: &ParamStore,
    config: &ModelConfig,
    seq: &[u32],
    mut dropout: Option<&mut ChaCha8Rng>,
) -> (Output, Cache) {
    let m = seq.len();
    let e = config.embed_dim;
    let scale = (e as f64).sqrt();
    let x0 = embed(params, seq) * scale + positional_encoding(m, e);
    let len = valid_len(seq);
    let key_mask: Vec<bool> = (0..m).map(|t| t < len).collect();
    let mha = load_mha(params, config.heads);
    let (a, mha_cache) =
        multi_head(&x0, &x0, &x0, &mha, Some(&key_mask)).expect("shapes fixed by construction");

    let mut draw = |rows, cols| match dropout.as_deref_mut() {
        Some(rng) if config.dropout > 0.0 => Some(dropout_mask(rng, rows, cols, config.dropout)),
        _ => None,
    };
    let drop1 = draw(m, e);
    let r1 = &x0 + &apply(&drop1, a);
    let (x1, ln1) = layer_norm(&r1, params.get("ln1.gamma"), params.get("ln1.beta"));

    let h_pre = x1.dot(params.get("ffn.w1")) + params.get("ffn.b1");
    let h_act = h_pre.mapv(|v| v.max(0.0));
    let f = h_act.dot(params.get("ffn.w2")) + params.get("ffn.b2");
    let drop2 = draw(m, e);
    let r2 = &x1 + &apply(&drop2, f);
    let (x2, ln2) = layer_norm(&r2, params.get("ln2.gamma"), params.get("ln2.beta"));

    // An empty sequence pools over every row so the output stays defined.
    let pool_rows = if len == 0 { m } else { len };
    let pooled = x2
        .slice(ndarray::s![..pool_rows, ..])
        .mean_axis(Axis(0))
        .expect("at least one row")
        .insert_axis(Axis(0));
    let logits = (pooled.dot(params.get("out_w")) + params.get("out_b")).row(0).to_owned();
    let probs = softmax2(&logits);
    let cache = Cache {
        x0,
        mha,
        mha_cache,
        drop1,
        ln1,
        x1,
        h_pre,
        h_act,
        drop2,
        ln2,
        pool_rows,
        pooled,
        logits,
    };
    (Output::Softmax(probs), cache)
}

fn softmax2(logits: &Array1<f64>) -> [f64; 2] {
    let mx = logits[0].max(logits[1]);
    let a = (logits[0] - mx).exp();
    let b = (logits[1] - mx).exp();
    [a / (a + b), b / (a + b)]
}

fn backward(params: &ParamStore, seq: &[u32], c: &Cache, dlogits: &Array1<f64>, grads: &mut ParamStore) {
    let dlogits = dlogits.view().insert_axis(Axis(0)).to_owned();
    grads.accumulate("out_w", &c.pooled.t().dot(&dlogits));
    grads.accumulate("out_b", &dlogits);
    let d_pooled = dlogits.dot(&params.get("out_w").t());

    let mut dx2 = Tensor::zeros(c.x1.raw_dim());
    let share = &d_pooled / c.pool_rows as f64;
    for t in 0..c.pool_rows {
        dx2.row_mut(t).assign(&share.row(0));
    }
    let (dr2, dg2, db2) = layer_norm_backward(&dx2, params.get("ln2.gamma"), &c.ln2);
    grads.accumulate("ln2.gamma", &dg2);
    grads.accumulate("ln2.beta", &db2);

    let mut dx1 = dr2.clone();
    let df = apply(&c.drop2, dr2);
    grads.accumulate("ffn.w2", &c.h_act.t().dot(&df));
    grads.accumulate("ffn.b2", &df.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let d_act = df.dot(&params.get("ffn.w2").t());
    let mut d_pre = d_act;
    d_pre.zip_mut_with(&c.h_pre, |d, &h| {
        if h <= 0.0 {
            *d = 0.0
        }
    });
    grads.accumulate("ffn.w1", &c.x1.t().dot(&d_pre));
    grads.accumulate("ffn.b1", &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0)));
    dx1 += &d_pre.dot(&params.get("ffn.w1").t());

    let (dr1, dg1, db1) = layer_norm_backward(&dx1, params.get("ln1.gamma"), &c.ln1);
    grads.accumulate("ln1.gamma", &dg1);
    grads.accumulate("ln1.beta", &db1);

    let mut dx0 = dr1.clone();
    let da = apply(&c.drop1, dr1);
    let g = multi_head_backward(&c.x0, &c.x0, &c.x0, &c.mha, &c.mha_cache, &da);
    for i in 0..c.mha.heads() {
        grads.accumulate(&format!("mha.w_q.{i}"), &g.w_q[i]);
        grads.accumulate(&format!("mha.w_k.{i}"), &g.w_k[i]);
        grads.accumulate(&format!("mha.w_v.{i}"), &g.w_v[i]);
    }
    grads.accumulate("mha.w_o", &g.w_o);
    dx0 += &g.dq;
    dx0 += &g.dk;
    dx0 += &g.dv;
    dx0 *= (c.x0.ncols() as f64).sqrt();
    scatter_embedding(grads, seq, &dx0);
}

pub(crate) fn loss_and_grad(
    params: &ParamStore,
    config: &ModelConfig,
    seq: &[u32],
    label: u8,
    dropout: Option<&mut ChaCha8Rng>,
    grads: &mut ParamStore,
) -> (f64, Output) {
    let (out, cache) = forward(params, config, seq, dropout);
    let (loss, _, dlogits) = softmax_xent(&cache.logits, label as usize);
    backward(params, seq, &cache, &dlogits, grads);
    (loss, out)
}

pub(crate) fn loss(params: &ParamStore, config: &ModelConfig, seq: &[u32], label: u8) -> (f64, Output) {
    let (out, cache) = forward(params, config, seq, None);
    (softmax_xent(&cache.logits, label as usize).0, out)
}
