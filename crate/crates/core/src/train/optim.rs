//! Adam with step decay and global-norm clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

/// lr₀ · 0.98^⌊epoch/10⌋.
pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.98f64.powi((epoch / 10) as i32)
}

pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient of `{name}` has shape {:?}", g.shape())));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(values));
        p
    }

    fn grads(values: Vec<f64>) -> Grads {
        BTreeMap::from([("w".to_string(), Tensor::vector(values))])
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(vec![1.0, 1.0, 1.0]);
        Adam::default().step(&mut p, &grads(vec![0.5, -3.0, 1e-3]), 0.01).unwrap();
        let d: Vec<f64> = p.get("w").unwrap().data().iter().map(|w| w - 1.0).collect();
        assert!((d[0] + 0.01).abs() < 1e-9);
        assert!((d[1] - 0.01).abs() < 1e-9);
        assert!((d[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_no_update() {
        let mut p = store(vec![0.3, -0.2]);
        Adam::default().step(&mut p, &grads(vec![0.0, 0.0]), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.3, -0.2]);
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            let mut p = store(vec![0.3, -0.2]);
            let mut adam = Adam::default();
            for k in 0..20 {
                let w = p.get("w").unwrap().data().to_vec();
                adam.step(&mut p, &grads(vec![2.0 * w[0] + k as f64 * 0.01, w[1].sin()]), 0.05).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = store(vec![0.0]);
        assert!(Adam::default().step(&mut p, &grads(vec![f64::NAN]), 0.1).is_err());
    }

    #[test]
    fn schedule_decays_every_ten_epochs() {
        assert_eq!(lr_schedule(1e-3, 0), 1e-3);
        assert_eq!(lr_schedule(1e-3, 9), 1e-3);
        assert!((lr_schedule(1e-3, 10) - 0.98e-3).abs() < 1e-18);
        assert!((lr_schedule(1.0, 25) - 0.9604).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = grads(vec![3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        let mut small = grads(vec![0.3, 0.4]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small["w"].data(), &[0.3, 0.4]);
    }
}
