//! AdamW with decoupled weight decay.

use super::params::ParamStore;
use super::round_to_precision;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Optimizer state: first and second moments per parameter and the step
/// count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients accumulated in `store`:
    /// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = &p.grad;
            let theta = p.value.data_mut();
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                theta[i] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * theta[i]);
            }
            round_to_precision(theta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(v));
        s
    }

    #[test]
    fn decay_only_step() {
        let mut s = store(2.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s);
        let got = s.iter().next().unwrap().1.value.item();
        assert!((got - 2.0 * (1.0 - 1e-3 * 1e-2)).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = store(1.0);
        s.iter_mut().next().unwrap().grad[0] = -0.3;
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s);
        let expected = 1.0 - 1e-3 * (-0.3 / (0.3 + 1e-8) + 1e-2 * 1.0);
        let got = s.iter().next().unwrap().1.value.item();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.05, ..Default::default() }, &s);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            s.zero_grad();
            let p = s.iter_mut().next().unwrap();
            p.grad[0] = 2.0 * p.value.item();
            opt.step(&mut s);
            let now = s.iter().next().unwrap().1.value.item().abs();
            assert!(now < prev);
            prev = now;
        }
    }
}
