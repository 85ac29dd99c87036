//! AdamW, the warmup + cosine learning-rate schedule and the generated-kernel
//! L2 penalty.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Param, ParamGroup};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    /// Coefficient of the penalty on generated kernels. When positive, kernel
    /// network parameters get no weight decay.
    pub kernel_l2: f64,
    pub eta_min: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr: 1e-3,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            warmup_epochs: 10.0,
            total_epochs: 100.0,
            kernel_l2: 0.0,
            eta_min: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0 <= self.warmup_epochs && self.warmup_epochs <= self.total_epochs) {
            return Err(Error::config(format!(
                "need 0 <= warmup_epochs ({}) <= total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        if self.weight_decay < 0.0 || self.kernel_l2 < 0.0 || self.eps <= 0.0 || self.eta_min < 0.0 {
            return Err(Error::config("weight_decay, kernel_l2 and eta_min must be >= 0 and eps > 0"));
        }
        Ok(())
    }
}

/// Learning rate at a (fractional) epoch: linear warmup from 0 to `base_lr`,
/// then cosine annealing to `eta_min` at `total_epochs`.
pub fn lr_at(epoch: f64, cfg: &OptimConfig) -> f64 {
    let e = epoch.clamp(0.0, cfg.total_epochs);
    if e < cfg.warmup_epochs {
        return cfg.base_lr * e / cfg.warmup_epochs;
    }
    let span = cfg.total_epochs - cfg.warmup_epochs;
    let progress = if span > 0.0 { (e - cfg.warmup_epochs) / span } else { 1.0 };
    cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Moment estimates keyed by parameter path.
#[derive(Clone, Debug, Default)]
pub struct AdamW<S: Scalar> {
    pub step: u64,
    pub moments: HashMap<String, (Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new() -> Self {
        AdamW {
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// One update of every trainable parameter with a gradient in `grads`.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Param<S>], grads: &Gradients<S>, lr: f64, cfg: &OptimConfig) -> Result<()> {
        for p in params.iter().filter(|p| p.trainable) {
            if let Some(g) = grads.get(&p.name) {
                if g.shape() != p.value.shape() {
                    return Err(Error::shape("adamw_step", g.shape(), p.value.shape()));
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite { op: "adamw_step" });
                }
            }
        }
        self.step += 1;
        let (b1, b2) = cfg.betas;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let Some(g) = grads.get(&p.name) else { continue };
            let decay = if p.group == ParamGroup::KernelNet && cfg.kernel_l2 > 0.0 {
                0.0
            } else {
                cfg.weight_decay
            };
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let shrink = 1.0 - lr * decay;
            for (((th, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi.as_f64();
                let mn = b1 * mi.as_f64() + (1.0 - b1) * gi;
                let vn = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
                *mi = S::cast(mn);
                *vi = S::cast(vn);
                let upd = (mn / bc1) / ((vn / bc2).sqrt() + cfg.eps);
                *th = S::cast(th.as_f64() * shrink - lr * upd);
            }
        }
        Ok(())
    }
}

/// `λ · ½ · Σ_l ‖k_l‖²` over generated kernels.
pub fn kernel_l2_loss<'t, S: Scalar>(tape: &'t Tape<S>, kernels: &[Var<'t, S>], lambda: f64) -> Result<Var<'t, S>> {
    if lambda == 0.0 || kernels.is_empty() {
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let norms = kernels.iter().map(|k| k.square()?.sum()).collect::<Result<Vec<_>>>()?;
    tape.add_all(&norms)?.scale(S::cast(0.5 * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OptimConfig {
        OptimConfig {
            base_lr: 0.01,
            warmup_epochs: 10.0,
            total_epochs: 100.0,
            eta_min: 1e-4,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg();
        assert_eq!(lr_at(0.0, &c), 0.0);
        assert!((lr_at(10.0, &c) - 0.01).abs() < 1e-15);
        assert!((lr_at(100.0, &c) - 1e-4).abs() < 1e-15);
        assert!((lr_at(5.0, &c) - 0.005).abs() < 1e-15);
        let eps = 1e-9;
        assert!((lr_at(10.0 - eps, &c) - lr_at(10.0 + eps, &c)).abs() < 1e-9);
    }

    #[test]
    fn no_warmup() {
        let c = OptimConfig {
            warmup_epochs: 0.0,
            ..cfg()
        };
        assert_eq!(lr_at(0.0, &c), 0.01);
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(OptimConfig { base_lr: 0.0, ..cfg() }.validate().is_err());
        assert!(OptimConfig { warmup_epochs: 200.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn first_step_is_lr_over_one_plus_eps() {
        let c = OptimConfig {
            base_lr: 0.1,
            eps: 1e-8,
            ..OptimConfig::default()
        };
        let mut p = Param::<f64>::new("w", Tensor::scalar(0.0));
        let mut g = Gradients::default();
        g.insert("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new();
        opt.step(&mut [&mut p], &g, 0.1, &c).unwrap();
        assert!((p.value.item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let c = OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mut p = Param::<f64>::new("w", Tensor::from_f64(&[2], &[2.0, -4.0]).unwrap());
        let mut g = Gradients::default();
        g.insert("w", Tensor::zeros(&[2]));
        AdamW::new().step(&mut [&mut p], &g, 0.1, &c).unwrap();
        assert!((p.value.data()[0] - 2.0 * 0.95).abs() < 1e-15);
        assert!((p.value.data()[1] + 4.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn kernel_net_params_skip_decay_under_kernel_penalty() {
        let c = OptimConfig {
            weight_decay: 0.5,
            kernel_l2: 0.1,
            ..OptimConfig::default()
        };
        let mut a = Param::<f64>::kernel_net("k", Tensor::scalar(1.0));
        let mut b = Param::<f64>::new("w", Tensor::scalar(1.0));
        let mut g = Gradients::default();
        g.insert("k", Tensor::scalar(0.0));
        g.insert("w", Tensor::scalar(0.0));
        AdamW::new().step(&mut [&mut a, &mut b], &g, 0.1, &c).unwrap();
        assert_eq!(a.value.item(), 1.0);
        assert!((b.value.item() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut p = Param::<f64>::new("w", Tensor::scalar(1.0));
        let mut q = Param::<f64>::new("v", Tensor::scalar(1.0));
        let mut g = Gradients::default();
        g.insert("w", Tensor::scalar(1.0));
        g.insert("v", Tensor::scalar(f64::NAN));
        let mut opt = AdamW::new();
        assert!(opt.step(&mut [&mut p, &mut q], &g, 0.1, &OptimConfig::default()).is_err());
        assert_eq!(p.value.item(), 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn kernel_l2_value_and_gradient() {
        let tape = Tape::<f64>::new();
        let k = tape.leaf(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        let loss = kernel_l2_loss(&tape, &[k], 0.1).unwrap();
        assert!((loss.value().item() - 1.25).abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        let gk = g.wrt(k).unwrap();
        assert!((gk.data()[0] - 0.3).abs() < 1e-12 && (gk.data()[1] - 0.4).abs() < 1e-12);
        assert_eq!(kernel_l2_loss(&tape, &[k], 0.0).unwrap().value().item(), 0.0);
    }
}
