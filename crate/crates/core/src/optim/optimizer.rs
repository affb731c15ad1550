use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimConfig {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        OptimConfig {
            kind,
            lr,
            weight_decay,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimConfig {
            momentum,
            ..Self::new(OptimizerKind::Sgd, lr, weight_decay)
        }
    }
}

/// `v ← μv + g + λw`, `w ← w − lr·v`.
pub fn sgd_step<S: Scalar>(w: &mut [S], g: &[S], v: &mut [S], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (S::from_f64c(lr), S::from_f64c(momentum), S::from_f64c(weight_decay));
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v + g + wd * *w;
        *w -= lr * *v;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_core<S: Scalar>(w: &mut [S], g: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &OptimConfig, coupled_wd: f64) {
    let (b1, b2) = (S::from_f64c(cfg.beta1), S::from_f64c(cfg.beta2));
    let (c1, c2) = (S::one() - b1, S::one() - b2);
    let bc1 = S::from_f64c(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = S::from_f64c(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps, wd) = (S::from_f64c(cfg.lr), S::from_f64c(cfg.eps), S::from_f64c(coupled_wd));
    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = if coupled_wd != 0.0 { g + wd * *w } else { g };
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *w -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Adam with bias correction; weight decay is added to the gradient. `t` is the 1-based step.
pub fn adam_step<S: Scalar>(w: &mut [S], g: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &OptimConfig) {
    adam_core(w, g, m, v, t, cfg, cfg.weight_decay);
}

/// AdamW: decoupled decay `w ← w(1 − lr·λ)`, then Adam on the raw gradient.
pub fn adamw_step<S: Scalar>(w: &mut [S], g: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &OptimConfig) {
    if cfg.weight_decay != 0.0 {
        let f = S::from_f64c(1.0 - cfg.lr * cfg.weight_decay);
        for x in w.iter_mut() {
            *x *= f;
        }
    }
    adam_core(w, g, m, v, t, cfg, 0.0);
}

/// Optimizer with one moment slot pair per parameter position.
#[derive(Clone, Debug)]
pub struct Optimizer<S> {
    pub cfg: OptimConfig,
    pub t: u64,
    slots: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(cfg: OptimConfig) -> Self {
        Optimizer {
            cfg,
            t: 0,
            slots: Vec::new(),
        }
    }

    /// Applies one update; `params[i]` pairs with `grads[i]` in a stable order.
    pub fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[&Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "Optimizer::step",
                format!("{} gradients", params.len()),
                format!("{}", grads.len()),
            ));
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::shape(
                "Optimizer::step",
                format!("{} parameters", self.slots.len()),
                format!("{}", params.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            g.expect_shape("Optimizer::step", p.shape())?;
            self.slots[i].0.expect_shape("Optimizer::step", p.shape())?;
        }
        self.t += 1;
        let t = self.t;
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.slots.iter_mut()) {
            match self.cfg.kind {
                OptimizerKind::Sgd => sgd_step(
                    p.data_mut(),
                    g.data(),
                    m.data_mut(),
                    self.cfg.lr,
                    self.cfg.momentum,
                    self.cfg.weight_decay,
                ),
                OptimizerKind::Adam => adam_step(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, &self.cfg),
                OptimizerKind::AdamW => adamw_step(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, &self.cfg),
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpoints.
    pub fn state(&self) -> (u64, Vec<(String, Tensor<S>)>) {
        let mut v = Vec::new();
        for (i, (m, s)) in self.slots.iter().enumerate() {
            v.push((format!("slot{i}.m"), m.clone()));
            v.push((format!("slot{i}.v"), s.clone()));
        }
        (self.t, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_is_gradient_descent() {
        let mut w = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut w, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(w, [0.95, -2.1]);
    }

    #[test]
    fn zero_gradient_leaves_sgd_params() {
        let mut w = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(w, [1.0, -2.0]);
    }

    #[test]
    fn momentum_two_step_recurrence() {
        let (lr, g) = (0.01f64, 0.7f64);
        let mut w = [0.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[g], &mut v, lr, 0.9, 0.0);
        sgd_step(&mut w, &[g], &mut v, lr, 0.9, 0.0);
        assert!((w[0] - (-lr * g * (1.0 + 1.9))).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = OptimConfig {
            eps: 1e-12,
            ..OptimConfig::new(OptimizerKind::Adam, 1e-3, 0.0)
        };
        let mut w = [0.0f64, 0.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_step(&mut w, &[3.0, -0.02], &mut m, &mut v, 1, &cfg);
        assert!((w[0] + 1e-3).abs() < 1e-9);
        assert!((w[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_adam_params() {
        let cfg = OptimConfig::new(OptimizerKind::Adam, 1e-3, 0.0);
        let mut w = [0.4f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=5 {
            adam_step(&mut w, &[0.0], &mut m, &mut v, t, &cfg);
        }
        assert_eq!(w, [0.4]);
    }

    #[test]
    fn adamw_decay_in_isolation() {
        let cfg = OptimConfig::new(OptimizerKind::AdamW, 0.01, 0.5);
        let mut w = [2.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_step(&mut w, &[0.0], &mut m, &mut v, 1, &cfg);
        assert!((w[0] - 2.0 * (1.0 - 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn adamw_without_decay_is_bitwise_adam() {
        let a = OptimConfig::new(OptimizerKind::Adam, 3e-3, 0.0);
        let b = OptimConfig::new(OptimizerKind::AdamW, 3e-3, 0.0);
        let mut wa = [0.3f32, -1.2, 0.05];
        let mut wb = wa;
        let (mut ma, mut va, mut mb, mut vb) = ([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]);
        for t in 1..=20 {
            let g = [(t as f32).sin(), 0.1 * t as f32, -0.3];
            adam_step(&mut wa, &g, &mut ma, &mut va, t, &a);
            adamw_step(&mut wb, &g, &mut mb, &mut vb, t, &b);
        }
        assert_eq!(wa.map(f32::to_bits), wb.map(f32::to_bits));
    }

    #[test]
    fn adamw_matches_reference_recurrence() {
        let cfg = OptimConfig::new(OptimizerKind::AdamW, 1e-2, 0.1);
        let (w0, g) = (0.8f64, 0.25f64);
        let mut w = [w0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_step(&mut w, &[g], &mut m, &mut v, 1, &cfg);
        // Reference: decay, then m̂ = g, v̂ = g².
        let want = w0 * (1.0 - 1e-2 * 0.1) - 1e-2 * g / (g.abs() + 1e-8);
        assert!((w[0] - want).abs() < 1e-15);
    }

    #[test]
    fn optimizer_checks_shapes_and_counts_steps() {
        let mut opt = Optimizer::<f64>::new(OptimConfig::new(OptimizerKind::Adam, 1e-3, 0.0));
        let mut p = Tensor::zeros(&[2, 2]);
        let g = Tensor::full(&[2, 2], 1.0);
        opt.step(vec![&mut p], &[&g]).unwrap();
        opt.step(vec![&mut p], &[&g]).unwrap();
        assert_eq!(opt.t, 2);
        let bad = Tensor::zeros(&[3]);
        assert!(opt.step(vec![&mut p], &[&bad]).is_err());
    }
}
