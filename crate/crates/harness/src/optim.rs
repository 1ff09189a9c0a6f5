//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use equiformer::nn::ParamSet;
use equiformer::{GradientSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamSet, grads: &GradientSet, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let update = (*mv / bc1) / ((*vv / bc2).sqrt() + c.eps);
                *pv -= lr * (update + c.weight_decay * *pv);
            }
        }
    }
}

/// Linear warmup from `warmup_factor · base` to `base`, then cosine decay
/// to `min_factor · base` at the last epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub warmup_factor: f64,
    pub min_factor: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let frac = epoch as f64 / self.warmup_epochs as f64;
            return self.base * (self.warmup_factor + (1.0 - self.warmup_factor) * frac);
        }
        let span = self.total_epochs.saturating_sub(self.warmup_epochs).max(1) as f64;
        let progress = ((epoch - self.warmup_epochs) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.base * (self.min_factor + (1.0 - self.min_factor) * cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    fn grad(v: f64) -> GradientSet {
        let mut g = GradientSet::default();
        g.insert("w", Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = one_param(0.5);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.update(&mut p, &grad(3.0), 0.0);
        assert_eq!(p.get("w").unwrap().data()[0], 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is sign(g) · lr
        let mut p = one_param(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update(&mut p, &grad(-4.0), 0.01);
        assert!((p.get("w").unwrap().data()[0] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_without_gradient_signal() {
        let mut p = one_param(2.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        opt.update(&mut p, &grad(0.0), 0.1);
        assert!((p.get("w").unwrap().data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule {
            base: 1.0,
            warmup_epochs: 5,
            total_epochs: 25,
            warmup_factor: 0.2,
            min_factor: 0.0,
        };
        assert_eq!(s.at(0), 0.2);
        assert!(s.at(4) < s.at(5));
        assert_eq!(s.at(5), 1.0);
        assert!((s.at(15) - 0.5).abs() < 1e-12);
        assert!(s.at(25).abs() < 1e-12);
        assert!((6..25).all(|e| s.at(e) <= s.at(e - 1)));
    }
}
