use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

pub type Tensor = Array2<f64>;

/// Named parameter tensors. Vectors are stored as `1 x n` matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    /// Panics on unknown names: parameter names are fixed by the
    /// architecture, so a miss is a programming error.
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// `self += scale * other`, matching by name.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        for (name, t) in &mut self.tensors {
            t.scaled_add(scale, other.get(name));
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors.values_mut() {
            t.fill(0.0);
        }
    }

    /// Adds `t` into the tensor named `name`.
    pub fn accumulate(&mut self, name: &str, t: &Tensor) {
        *self.get_mut(name) += t;
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Tensor {
    Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

/// Glorot-uniform initialization.
pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, limit)
}
