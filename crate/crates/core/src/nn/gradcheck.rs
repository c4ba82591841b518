//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check builds random inputs, reduces the layer output to a scalar
//! through a fixed random projection, and compares every analytic partial
//! against `(f(x + eps) - f(x - eps)) / 2 eps`.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{
    multi_head, multi_head_backward, scaled_dot_attention, scaled_dot_attention_backward,
    MultiHeadParams,
};
use super::gru::{gru_cell, gru_cell_backward, GruParams};
use super::layers::bce_with_logit;
use super::model::{init_params, loss, loss_and_grad, ModelConfig, ModelKind};
use super::store::{uniform, ParamStore};
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradComponent {
    Attention,
    MultiHead,
    GruCell,
    AffineBce,
    BigruModel,
    TransformerModel,
}

impl GradComponent {
    pub const ALL: [GradComponent; 6] = [
        GradComponent::Attention,
        GradComponent::MultiHead,
        GradComponent::GruCell,
        GradComponent::AffineBce,
        GradComponent::BigruModel,
        GradComponent::TransformerModel,
    ];
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error over every input and parameter of `component`.
pub fn grad_check(component: GradComponent, epsilon: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match component {
        GradComponent::Attention => attention(&mut rng, epsilon),
        GradComponent::MultiHead => multi_head_check(&mut rng, epsilon),
        GradComponent::GruCell => gru(&mut rng, epsilon),
        GradComponent::AffineBce => affine_bce(&mut rng, epsilon),
        GradComponent::BigruModel => model(ModelKind::BigruAttn, seed, epsilon),
        GradComponent::TransformerModel => model(ModelKind::Transformer, seed, epsilon),
    }
}

/// Perturbs every entry of `inputs[i]` and compares with `analytic[i]`.
fn compare<F>(inputs: &mut [Tensor], analytic: &[Tensor], epsilon: f64, f: F) -> f64
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for idx in 0..inputs[i].len() {
            let (r, c) = (idx / inputs[i].ncols(), idx % inputs[i].ncols());
            let orig = inputs[i][[r, c]];
            inputs[i][[r, c]] = orig + epsilon;
            let plus = f(inputs);
            inputs[i][[r, c]] = orig - epsilon;
            let minus = f(inputs);
            inputs[i][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[i][[r, c]], numeric));
        }
    }
    worst
}

fn project(out: &Tensor, proj: &Tensor) -> f64 {
    (out * proj).sum()
}

fn attention(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let (n, m, dk, dv) = (3, 5, 4, 3);
    let mask = vec![true, true, false, true, false];
    let mut inputs = vec![
        uniform(rng, n, dk, 1.0),
        uniform(rng, m, dk, 1.0),
        uniform(rng, m, dv, 1.0),
    ];
    let proj = uniform(rng, n, dv, 1.0);
    let out = scaled_dot_attention(&inputs[0], &inputs[1], &inputs[2], Some(&mask)).unwrap();
    let g = scaled_dot_attention_backward(&inputs[0], &inputs[1], &inputs[2], &out.weights, &proj);
    compare(&mut inputs, &[g.dq, g.dk, g.dv], eps, |x| {
        let o = scaled_dot_attention(&x[0], &x[1], &x[2], Some(&mask)).unwrap();
        project(&o.context, &proj)
    })
}

fn multi_head_check(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let (n, m, d, heads) = (3, 4, 4, 2);
    let mask = vec![true, true, true, false];
    let p = MultiHeadParams::random(rng, d, heads).unwrap();
    let proj = uniform(rng, n, d, 1.0);
    let mut inputs = vec![uniform(rng, n, d, 1.0), uniform(rng, m, d, 1.0), uniform(rng, m, d, 1.0)];
    inputs.extend(p.w_q.iter().cloned());
    inputs.extend(p.w_k.iter().cloned());
    inputs.extend(p.w_v.iter().cloned());
    inputs.push(p.w_o.clone());
    let unpack = |x: &[Tensor]| MultiHeadParams {
        w_q: x[3..3 + heads].to_vec(),
        w_k: x[3 + heads..3 + 2 * heads].to_vec(),
        w_v: x[3 + 2 * heads..3 + 3 * heads].to_vec(),
        w_o: x[3 + 3 * heads].clone(),
    };
    let (_, cache) = multi_head(&inputs[0], &inputs[1], &inputs[2], &p, Some(&mask)).unwrap();
    let g = multi_head_backward(&inputs[0], &inputs[1], &inputs[2], &p, &cache, &proj);
    let mut analytic = vec![g.dq, g.dk, g.dv];
    analytic.extend(g.w_q);
    analytic.extend(g.w_k);
    analytic.extend(g.w_v);
    analytic.push(g.w_o);
    compare(&mut inputs, &analytic, eps, |x| {
        let (o, _) = multi_head(&x[0], &x[1], &x[2], &unpack(x), Some(&mask)).unwrap();
        project(&o, &proj)
    })
}

fn gru_params_from(x: &[Tensor]) -> GruParams {
    GruParams {
        w_z: x[0].clone(),
        w_r: x[1].clone(),
        w_h: x[2].clone(),
        u_z: x[3].clone(),
        u_r: x[4].clone(),
        u_h: x[5].clone(),
        b_z: x[6].clone(),
        b_r: x[7].clone(),
        b_h: x[8].clone(),
    }
}

fn gru(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let (e, g) = (4, 3);
    let mut p = GruParams::random(rng, e, g);
    p.b_z = uniform(rng, 1, g, 0.5);
    p.b_r = uniform(rng, 1, g, 0.5);
    p.b_h = uniform(rng, 1, g, 0.5);
    let proj = Array1::from_iter((0..g).map(|_| rng.gen_range(-1.0..1.0)));
    let mut inputs = vec![
        p.w_z.clone(),
        p.w_r.clone(),
        p.w_h.clone(),
        p.u_z.clone(),
        p.u_r.clone(),
        p.u_h.clone(),
        p.b_z.clone(),
        p.b_r.clone(),
        p.b_h.clone(),
        uniform(rng, 1, e, 1.0),
        uniform(rng, 1, g, 1.0),
    ];
    let step = gru_cell(&p, inputs[9].row(0), inputs[10].row(0));
    let mut grads = GruParams::zeros(e, g);
    let (dx, dh) = gru_cell_backward(&p, &step, &proj, &mut grads);
    let analytic = vec![
        grads.w_z,
        grads.w_r,
        grads.w_h,
        grads.u_z,
        grads.u_r,
        grads.u_h,
        grads.b_z,
        grads.b_r,
        grads.b_h,
        dx.insert_axis(ndarray::Axis(0)),
        dh.insert_axis(ndarray::Axis(0)),
    ];
    compare(&mut inputs, &analytic, eps, |x| {
        let s = gru_cell(&gru_params_from(x), x[9].row(0), x[10].row(0));
        s.h.dot(&proj)
    })
}

fn affine_bce(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let d = 6;
    let mut inputs = vec![uniform(rng, 1, d, 1.0), uniform(rng, d, 1, 1.0), uniform(rng, 1, 1, 0.5)];
    let label = 1u8;
    let logit = |x: &[Tensor]| x[0].dot(&x[1])[[0, 0]] + x[2][[0, 0]];
    let (_, dz) = bce_with_logit(logit(&inputs), label);
    let analytic = vec![
        inputs[1].t().to_owned() * dz,
        inputs[0].t().to_owned() * dz,
        Tensor::from_elem((1, 1), dz),
    ];
    compare(&mut inputs, &analytic, eps, |x| bce_with_logit(logit(x), label).0)
}

fn model(kind: ModelKind, seed: u64, eps: f64) -> f64 {
    let mut config = ModelConfig::desk(kind);
    config.max_len = 5;
    config.embed_dim = 4;
    config.hidden_dim = 3;
    config.ff_dim = 5;
    config.dropout = 0.0;
    config.seed = seed;
    let vocab_size = 7;
    let mut params = init_params(&config, vocab_size).unwrap();
    // Unit-scale embeddings keep every partial well above finite-difference noise.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.insert("embedding", uniform(&mut rng, vocab_size, config.embed_dim, 1.0));
    let seq = [3u32, 5, 2, 6, 0];
    let label = 1;
    let mut grads = params.zeros_like();
    loss_and_grad(&params, &config, &seq, label, None, &mut grads);
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs: Vec<Tensor> = names.iter().map(|n| params.get(n).clone()).collect();
    let analytic: Vec<Tensor> = names.iter().map(|n| grads.get(n).clone()).collect();
    let rebuild = |x: &[Tensor], store: &mut ParamStore| {
        for (n, t) in names.iter().zip(x) {
            store.insert(n.clone(), t.clone());
        }
    };
    let cell = std::cell::RefCell::new(params.clone());
    compare(&mut inputs, &analytic, eps, |x| {
        let mut store = cell.borrow_mut();
        rebuild(x, &mut store);
        loss(&store, &config, &seq, label).0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes() {
        for c in GradComponent::ALL {
            for seed in 0..3 {
                let err = grad_check(c, 1e-5, seed);
                assert!(err < 1e-5, "{c:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.04);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
