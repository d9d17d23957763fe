//! Adam with two learning-rate groups: grid tables and dense weights.

use serde::{Deserialize, Serialize};

use crate::param::ParamSet;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Hash tables and per-wavelet factors.
    pub lr_grid: f64,
    /// MLP weights, projection and adapter.
    pub lr_mlp: f64,
    /// Decoupled weight decay on the per-wavelet factors, per unit of
    /// learning rate.
    pub wavelet_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-10,
            lr_grid: 1e-2,
            lr_mlp: 1e-3,
            wavelet_decay: 0.0,
        }
    }
}

pub fn is_grid_tensor(name: &str) -> bool {
    name == "field.hash" || name == "field.wavelet"
}

/// Cosine decay from 1 to `floor` over `total` steps.
pub fn cosine_schedule(step: usize, total: usize, floor: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let t = (step as f64 / total as f64).min(1.0);
    floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new<P: ParamSet<T>>(params: &P, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update; `lr_scale` multiplies both group learning rates.
    pub fn step<P: ParamSet<T>, G: ParamSet<T>>(&mut self, params: &mut P, grads: &G, lr_scale: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let grads = grads.tensors();
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let lr = lr_scale * if is_grid_tensor(p.name) { self.cfg.lr_grid } else { self.cfg.lr_mlp };
            let step = T::lit(lr * bc2.sqrt() / bc1);
            let eps = T::lit(self.cfg.eps * bc2.sqrt());
            let (tb1, tb2) = (T::lit(b1), T::lit(b2));
            let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
            let decay = T::lit(1.0 - lr * if p.name == "field.wavelet" { self.cfg.wavelet_decay } else { 0.0 });
            let g = grads[i].data;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let gj = g[j];
                m[j] = tb1 * m[j] + ob1 * gj;
                v[j] = tb2 * v[j] + ob2 * gj * gj;
                p.data[j] = decay * p.data[j] - step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{TensorMut, TensorRef};

    struct Quad {
        x: Vec<f64>,
    }

    impl ParamSet<f64> for Quad {
        fn tensors(&self) -> Vec<TensorRef<'_, f64>> {
            vec![TensorRef { name: "mlp.w", shape: vec![self.x.len()], data: &self.x }]
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_, f64>> {
            vec![TensorMut { name: "mlp.w", data: &mut self.x }]
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Quad { x: vec![3.0, -2.0] };
        let mut adam = Adam::new(&p, AdamConfig { lr_mlp: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let g = Quad { x: p.x.iter().map(|v| 2.0 * v).collect() };
            adam.step(&mut p, &g, 1.0);
        }
        assert!(p.x.iter().all(|v| v.abs() < 1e-3), "{:?}", p.x);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Quad { x: vec![1.0] };
        let mut adam = Adam::new(&p, AdamConfig { lr_mlp: 0.01, ..Default::default() });
        adam.step(&mut p, &Quad { x: vec![5.0] }, 1.0);
        assert!((p.x[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn decay_applies_only_to_wavelet_factors() {
        struct Two {
            w: Vec<f64>,
            m: Vec<f64>,
        }
        impl ParamSet<f64> for Two {
            fn tensors(&self) -> Vec<TensorRef<'_, f64>> {
                vec![
                    TensorRef { name: "field.wavelet", shape: vec![1], data: &self.w },
                    TensorRef { name: "mlp.w", shape: vec![1], data: &self.m },
                ]
            }
            fn tensors_mut(&mut self) -> Vec<TensorMut<'_, f64>> {
                vec![TensorMut { name: "field.wavelet", data: &mut self.w }, TensorMut { name: "mlp.w", data: &mut self.m }]
            }
        }
        let mut p = Two { w: vec![2.0], m: vec![2.0] };
        let cfg = AdamConfig { lr_grid: 0.1, lr_mlp: 0.1, wavelet_decay: 0.5, ..Default::default() };
        let mut adam = Adam::new(&p, cfg);
        adam.step(&mut p, &Two { w: vec![0.0], m: vec![0.0] }, 1.0);
        assert!((p.w[0] - 2.0 * 0.95).abs() < 1e-12);
        assert_eq!(p.m[0], 2.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_schedule(0, 100, 0.1), 1.0);
        assert!((cosine_schedule(100, 100, 0.1) - 0.1).abs() < 1e-12);
        assert!((cosine_schedule(50, 100, 0.0) - 0.5).abs() < 1e-12);
    }
}
