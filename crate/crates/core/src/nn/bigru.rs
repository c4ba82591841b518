//! Embedding -> BiGRU -> attention pooling -> sigmoid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{scaled_dot_attention, scaled_dot_attention_backward};
use super::gru::{bigru_backward, bigru_encode, GruParams};
use super::layers::{bce_with_logit, dropout_mask, sigmoid};
use super::model::{valid_len, ModelConfig, Output};
use super::store::{glorot, ParamStore};
use super::Tensor;

pub(crate) fn init<R: Rng>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) {
    let (e, g) = (config.embed_dim, config.hidden_dim);
    GruParams::random(rng, e, g).store_into(store, "gru_fwd");
    GruParams::random(rng, e, g).store_into(store, "gru_bwd");
    store.insert("attn_query", glorot(rng, 1, 2 * g));
    store.insert("out_w", glorot(rng, 2 * g, 1));
    store.insert("out_b", Tensor::zeros((1, 1)));
}

pub(crate) fn embed(params: &ParamStore, seq: &[u32]) -> Tensor {
    let table = params.get("embedding");
    let mut xs = Tensor::zeros((seq.len(), table.ncols()));
    for (t, &id) in seq.iter().enumerate() {
        xs.row_mut(t).assign(&table.row(id as usize));
    }
    xs
}

pub(crate) fn scatter_embedding(grads: &mut ParamStore, seq: &[u32], dxs: &Tensor) {
    let table = grads.get_mut("embedding");
    for (t, &id) in seq.iter().enumerate() {
        table.row_mut(id as usize).scaled_add(1.0, &dxs.row(t));
    }
}

pub(crate) struct Cache {
    xs: Tensor,
    fwd: GruParams,
    bwd: GruParams,
    gru: super::gru::BiGruCache,
    states: Tensor,
    attn_weights: Tensor,
    pooled: Tensor,
    drop: Option<Tensor>,
    logit: f64,
}

pub(crate) fn forward(
    params: &ParamStore,
    config: &ModelConfig,
    seq: &[u32],
    dropout: Option<&mut ChaCha8Rng>,
) -> (Output, Cache) {
    let xs = embed(params, seq);
    let fwd = GruParams::from_store(params, "gru_fwd");
    let bwd = GruParams::from_store(params, "gru_bwd");
    let len = valid_len(seq);
    let (states, gru) = bigru_encode(&fwd, &bwd, &xs, len);
    let mask: Vec<bool> = (0..seq.len()).map(|t| t < len).collect();
    let query = params.get("attn_query");
    let att = scaled_dot_attention(query, &states, &states, Some(&mask))
        .expect("shapes fixed by construction");
    let pooled = att.context;
    let drop = match dropout {
        Some(rng) if config.dropout > 0.0 => {
            Some(dropout_mask(rng, 1, pooled.ncols(), config.dropout))
        }
        _ => None,
    };
    let dropped = match &drop {
        Some(m) => &pooled * m,
        None => pooled.clone(),
    };
    let logit = dropped.dot(params.get("out_w"))[[0, 0]] + params.get("out_b")[[0, 0]];
    let cache = Cache {
        xs,
        fwd,
        bwd,
        gru,
        states,
        attn_weights: att.weights,
        pooled,
        drop,
        logit,
    };
    (Output::Sigmoid(sigmoid(logit)), cache)
}

fn backward(params: &ParamStore, seq: &[u32], cache: &Cache, dlogit: f64, grads: &mut ParamStore) {
    let dropped = match &cache.drop {
        Some(m) => &cache.pooled * m,
        None => cache.pooled.clone(),
    };
    let d_out_w = dropped.t().to_owned() * dlogit;
    grads.accumulate("out_w", &d_out_w);
    grads.get_mut("out_b")[[0, 0]] += dlogit;

    let mut d_pooled = params.get("out_w").t().to_owned() * dlogit;
    if let Some(m) = &cache.drop {
        d_pooled *= m;
    }
    let query = params.get("attn_query");
    let g = scaled_dot_attention_backward(
        query,
        &cache.states,
        &cache.states,
        &cache.attn_weights,
        &d_pooled,
    );
    grads.accumulate("attn_query", &g.dq);
    let d_states = g.dk + g.dv;
    let (dxs, gf, gb) = bigru_backward(
        &cache.fwd,
        &cache.bwd,
        &cache.gru,
        &d_states,
        cache.xs.ncols(),
    );
    gf.accumulate_into(grads, "gru_fwd");
    gb.accumulate_into(grads, "gru_bwd");
    scatter_embedding(grads, seq, &dxs);
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
    let (loss, dlogit) = bce_with_logit(cache.logit, label);
    backward(params, seq, &cache, dlogit, grads);
    (loss, out)
}

pub(crate) fn loss(params: &ParamStore, config: &ModelConfig, seq: &[u32], label: u8) -> (f64, Output) {
    let (out, cache) = forward(params, config, seq, None);
    (bce_with_logit(cache.logit, label).0, out)
}
