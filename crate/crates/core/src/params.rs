//! Flat named registry of every learnable tensor.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::Gradients;

/// All learnable tensors of a model, keyed by dotted names such as
/// `text.mg0.attn.wq`. Iteration order is the lexicographic name order, which
/// fixes the on-disk checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Array2<f64>> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Array2::len).sum()
    }

    /// Registers `name` with entries drawn from uniform(−1/√fan_in, 1/√fan_in).
    pub fn init_uniform<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        shape: (usize, usize),
        fan_in: usize,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, value);
    }

    pub fn init_const(&mut self, name: impl Into<String>, shape: (usize, usize), v: f64) {
        self.insert(name, Array2::from_elem(shape, v));
    }
}

/// Global L2 norm over a gradient map.
pub fn grad_norm(grads: &Gradients) -> f64 {
    grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Adds `other` into `acc`, creating entries as needed.
pub fn accumulate(acc: &mut Gradients, other: Gradients) {
    for (name, g) in other {
        match acc.get_mut(&name) {
            Some(existing) => *existing += &g,
            None => {
                acc.insert(name, g);
            }
        }
    }
}
