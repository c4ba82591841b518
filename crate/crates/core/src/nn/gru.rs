//! GRU cell and bidirectional encoder.
//!
//! Gate equations (row vectors):
//!
//! ```text
//! z  = sigmoid(x W_z + h U_z + b_z)
//! r  = sigmoid(x W_r + h U_r + b_r)
//! n  = tanh(x W_h + (r * h) U_h + b_h)
//! h' = (1 - z) * h + z * n
//! ```

use ndarray::{s, Array1, ArrayView1, Axis};
use rand::Rng;

use super::layers::sigmoid;
use super::store::{glorot, ParamStore};
use super::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

const NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros((input, hidden));
        let u = || Tensor::zeros((hidden, hidden));
        let b = || Tensor::zeros((1, hidden));
        GruParams {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    pub fn random<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut p = GruParams::zeros(input, hidden);
        for t in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            *t = glorot(rng, input, hidden);
        }
        for t in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            *t = glorot(rng, hidden, hidden);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.u_z.nrows()
    }

    fn fields(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn store_into(&self, store: &mut ParamStore, prefix: &str) {
        for (name, t) in NAMES.iter().zip(self.fields()) {
            store.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Self {
        let mut p = GruParams::zeros(0, 0);
        for (name, t) in NAMES.iter().zip(p.fields_mut()) {
            *t = store.get(&format!("{prefix}.{name}")).clone();
        }
        p
    }

    pub fn accumulate_into(&self, store: &mut ParamStore, prefix: &str) {
        for (name, t) in NAMES.iter().zip(self.fields()) {
            store.accumulate(&format!("{prefix}.{name}"), t);
        }
    }
}

/// Activations of one cell step.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub n: Array1<f64>,
    pub h: Array1<f64>,
}

fn row(t: &Tensor) -> ArrayView1<'_, f64> {
    t.row(0)
}

pub fn gru_cell(p: &GruParams, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> GruStep {
    let z = (x.dot(&p.w_z) + h_prev.dot(&p.u_z) + row(&p.b_z)).mapv(sigmoid);
    let r = (x.dot(&p.w_r) + h_prev.dot(&p.u_r) + row(&p.b_r)).mapv(sigmoid);
    let rh = &r * &h_prev;
    let n = (x.dot(&p.w_h) + rh.dot(&p.u_h) + row(&p.b_h)).mapv(f64::tanh);
    let h = (1.0 - &z) * h_prev + &z * &n;
    GruStep {
        x: x.to_owned(),
        h_prev: h_prev.to_owned(),
        z,
        r,
        n,
        h,
    }
}

fn add_outer(acc: &mut Tensor, a: &Array1<f64>, b: &Array1<f64>) {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    ndarray::linalg::general_mat_mul(1.0, &a2, &b2, 1.0, acc);
}

/// Backpropagates `dh` through one step, accumulating parameter gradients
/// into `grads`. Returns `(dx, dh_prev)`.
pub fn gru_cell_backward(
    p: &GruParams,
    step: &GruStep,
    dh: &Array1<f64>,
    grads: &mut GruParams,
) -> (Array1<f64>, Array1<f64>) {
    let dz = dh * &(&step.n - &step.h_prev);
    let dn = dh * &step.z;
    let mut dh_prev = dh * &(1.0 - &step.z);

    let dan = &dn * &(1.0 - &step.n * &step.n);
    let rh = &step.r * &step.h_prev;
    add_outer(&mut grads.w_h, &step.x, &dan);
    add_outer(&mut grads.u_h, &rh, &dan);
    grads.b_h.row_mut(0).scaled_add(1.0, &dan);
    let drh = p.u_h.dot(&dan);
    let dr = &drh * &step.h_prev;
    dh_prev += &(&drh * &step.r);

    let daz = &dz * &(&step.z * &(1.0 - &step.z));
    add_outer(&mut grads.w_z, &step.x, &daz);
    add_outer(&mut grads.u_z, &step.h_prev, &daz);
    grads.b_z.row_mut(0).scaled_add(1.0, &daz);
    dh_prev += &p.u_z.dot(&daz);

    let dar = &dr * &(&step.r * &(1.0 - &step.r));
    add_outer(&mut grads.w_r, &step.x, &dar);
    add_outer(&mut grads.u_r, &step.h_prev, &dar);
    grads.b_r.row_mut(0).scaled_add(1.0, &dar);
    dh_prev += &p.u_r.dot(&dar);

    let dx = p.w_z.dot(&daz) + p.w_r.dot(&dar) + p.w_h.dot(&dan);
    (dx, dh_prev)
}

fn run_direction(p: &GruParams, xs: &Tensor, order: impl Iterator<Item = usize>) -> Vec<(usize, GruStep)> {
    let mut h = Array1::zeros(p.hidden());
    order
        .map(|t| {
            let step = gru_cell(p, xs.row(t), h.view());
            h = step.h.clone();
            (t, step)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    pub forward: Vec<(usize, GruStep)>,
    pub backward: Vec<(usize, GruStep)>,
    pub len: usize,
}

/// Runs both directions over the first `valid_len` rows of `xs`; returns
/// `T x 2G` states (forward half first). Rows at or beyond `valid_len`
/// are zero.
pub fn bigru_encode(
    fwd: &GruParams,
    bwd: &GruParams,
    xs: &Tensor,
    valid_len: usize,
) -> (Tensor, BiGruCache) {
    let len = valid_len.min(xs.nrows());
    let g = fwd.hidden();
    let forward = run_direction(fwd, xs, 0..len);
    let backward = run_direction(bwd, xs, (0..len).rev());
    let mut states = Tensor::zeros((xs.nrows(), g + bwd.hidden()));
    for (t, step) in &forward {
        states.slice_mut(s![*t, ..g]).assign(&step.h);
    }
    for (t, step) in &backward {
        states.slice_mut(s![*t, g..]).assign(&step.h);
    }
    (
        states,
        BiGruCache {
            forward,
            backward,
            len,
        },
    )
}

fn backprop_direction(
    p: &GruParams,
    steps: &[(usize, GruStep)],
    d_states: &Tensor,
    cols: std::ops::Range<usize>,
    dxs: &mut Tensor,
) -> GruParams {
    let mut grads = GruParams::zeros(p.w_z.nrows(), p.hidden());
    let mut dh_next = Array1::zeros(p.hidden());
    for (t, step) in steps.iter().rev() {
        let dh = &d_states.slice(s![*t, cols.clone()]) + &dh_next;
        let (dx, dh_prev) = gru_cell_backward(p, step, &dh, &mut grads);
        dxs.row_mut(*t).scaled_add(1.0, &dx);
        dh_next = dh_prev;
    }
    grads
}

/// Returns `(dxs, forward grads, backward grads)`.
pub fn bigru_backward(
    fwd: &GruParams,
    bwd: &GruParams,
    cache: &BiGruCache,
    d_states: &Tensor,
    input_dim: usize,
) -> (Tensor, GruParams, GruParams) {
    let g = fwd.hidden();
    let mut dxs = Tensor::zeros((d_states.nrows(), input_dim));
    let gf = backprop_direction(fwd, &cache.forward, d_states, 0..g, &mut dxs);
    let gb = backprop_direction(bwd, &cache.backward, d_states, g..d_states.ncols(), &mut dxs);
    (dxs, gf, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_states() {
        let p = GruParams::zeros(3, 2);
        let xs = Tensor::from_elem((4, 3), 0.7);
        let (states, _) = bigru_encode(&p, &p, &xs, 4);
        assert!(states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_direction_is_forward_on_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fwd = GruParams::random(&mut rng, 3, 2);
        let bwd = GruParams::random(&mut rng, 3, 2);
        let xs = uniform(&mut rng, 5, 3, 1.0);
        let (states, _) = bigru_encode(&fwd, &bwd, &xs, 5);

        let reversed = xs.slice(s![..;-1, ..]).to_owned();
        let (rev_states, _) = bigru_encode(&bwd, &fwd, &reversed, 5);
        for t in 0..5 {
            assert_eq!(states.slice(s![t, 2..]), rev_states.slice(s![4 - t, ..2]));
        }
    }

    #[test]
    fn hand_computed_two_step_case() {
        // E = 1, G = 1; every weight 0.5, biases 0.
        let mut p = GruParams::zeros(1, 1);
        for t in [&mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h] {
            t.fill(0.5);
        }
        let xs = ndarray::array![[1.0], [-2.0]];
        let (states, _) = bigru_encode(&p, &p, &xs, 2);

        let cell = |x: f64, h: f64| {
            let z = 1.0 / (1.0 + (-(0.5 * x + 0.5 * h)).exp());
            let r = 1.0 / (1.0 + (-(0.5 * x + 0.5 * h)).exp());
            let n = (0.5 * x + 0.5 * r * h).tanh();
            (1.0 - z) * h + z * n
        };
        let f0 = cell(1.0, 0.0);
        let f1 = cell(-2.0, f0);
        let b1 = cell(-2.0, 0.0);
        let b0 = cell(1.0, b1);
        assert!((states[[0, 0]] - f0).abs() < 1e-15);
        assert!((states[[1, 0]] - f1).abs() < 1e-15);
        assert!((states[[1, 1]] - b1).abs() < 1e-15);
        assert!((states[[0, 1]] - b0).abs() < 1e-15);
    }

    #[test]
    fn padded_rows_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fwd = GruParams::random(&mut rng, 3, 2);
        let xs = uniform(&mut rng, 5, 3, 1.0);
        let (states, _) = bigru_encode(&fwd, &fwd, &xs, 3);
        assert!(states.slice(s![3.., ..]).iter().all(|&v| v == 0.0));
        // the valid prefix is unaffected by what sits in the padded rows
        let (prefix, _) = bigru_encode(&fwd, &fwd, &xs.slice(s![..3, ..]).to_owned(), 3);
        assert_eq!(states.slice(s![..3, ..]), prefix);
    }
}
