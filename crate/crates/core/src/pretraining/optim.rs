use std::collections::BTreeMap;

use ndarray::Array2;

use crate::autodiff::Gradients;
use crate::params::{grad_norm, ParamStore};

/// Number of warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, warmup_frac: f64) -> usize {
    (warmup_frac * total_steps as f64).ceil() as usize
}

/// Linear warmup from `base / warmup` at step 0 to `base` at the last warmup
/// step, constant afterwards.
pub fn lr_at(step: usize, total_steps: usize, base: f64, warmup_frac: f64) -> f64 {
    let warm = warmup_steps(total_steps, warmup_frac);
    if step < warm {
        base * (step + 1) as f64 / warm as f64
    } else {
        base
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Clips `grads` to global norm `clip` (when positive), then applies one
    /// update. Returns the pre-clip norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Gradients, lr: f64, clip: f64) -> f64 {
        let norm = grad_norm(grads);
        if clip > 0.0 && norm > clip {
            let s = clip / norm;
            for g in grads.values_mut() {
                *g *= s;
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut names: Vec<&String> = grads.keys().collect();
        names.sort();
        for name in names {
            let g = &grads[name];
            let Some(p) = params.get_mut(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * self.weight_decay * *p;
                    *p -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
        norm
    }
}
