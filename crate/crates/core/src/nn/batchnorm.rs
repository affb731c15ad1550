use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::StateDict;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalisation over `N×C×H×W`.
///
/// Running statistics follow `running = (1 − m)·running + m·batch`, with the
/// unbiased batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache<S> {
    mode: BnMode,
    x_hat: Tensor<S>,
    inv_std: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub x: Tensor<S>,
}

fn dims<S: Scalar>(x: &Tensor<S>, c: usize) -> Result<(usize, usize)> {
    if x.rank() != 4 || x.dim(1) != c {
        return Err(Error::shape("batchnorm", format!("N×{c}×H×W"), format!("{:?}", x.shape())));
    }
    Ok((x.dim(0), x.dim(2) * x.dim(3)))
}

impl<S: Scalar> BatchNorm<S> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], S::one()),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(mean, biased variance)` of `x`.
    pub fn batch_stats(&self, x: &Tensor<S>) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.channels();
        let (n, hw) = dims(x, c)?;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for (i, plane) in x.data().chunks_exact(hw).enumerate() {
            let ch = i % c;
            for &v in plane {
                let v = v.to_f64c();
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        let m = (n * hw) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
        let var = sq.iter().zip(&mean).map(|(q, mu)| (q / m - mu * mu).max(0.0)).collect();
        Ok((mean, var))
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: BnMode) -> Result<(Tensor<S>, BnCache<S>)> {
        let c = self.channels();
        let (n, hw) = dims(x, c)?;
        let (mean, inv_std): (Vec<S>, Vec<S>) = match mode {
            BnMode::Train => {
                let (mu, var) = self.batch_stats(x)?;
                let m = (n * hw) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let mom = self.momentum;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = S::from_f64c((1.0 - mom) * rm.to_f64c() + mom * mu[ch]);
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = S::from_f64c((1.0 - mom) * rv.to_f64c() + mom * var[ch] * unbias);
                }
                (
                    mu.iter().map(|&v| S::from_f64c(v)).collect(),
                    var.iter().map(|&v| S::from_f64c(1.0 / (v + self.eps).sqrt())).collect(),
                )
            }
            BnMode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var
                    .data()
                    .iter()
                    .map(|&v| S::from_f64c(1.0 / (v.to_f64c() + self.eps).sqrt()))
                    .collect(),
            ),
        };
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for (i, (xh, yv)) in x_hat.data_mut().chunks_exact_mut(hw).zip(y.data_mut().chunks_exact_mut(hw)).enumerate() {
            let ch = i % c;
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for (h, o) in xh.iter_mut().zip(yv.iter_mut()) {
                *h = (*h - mean[ch]) * inv_std[ch];
                *o = *h * g + b;
            }
        }
        Ok((y, BnCache { mode, x_hat, inv_std }))
    }

    /// Eval-mode forward without a cache.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let c = self.channels();
        let (_, hw) = dims(x, c)?;
        let mut y = x.clone();
        for (i, plane) in y.data_mut().chunks_exact_mut(hw).enumerate() {
            let ch = i % c;
            let inv = S::from_f64c(1.0 / (self.running_var.data()[ch].to_f64c() + self.eps).sqrt());
            let scale = self.gamma.data()[ch] * inv;
            let shift = self.beta.data()[ch] - self.running_mean.data()[ch] * scale;
            for v in plane {
                *v = *v * scale + shift;
            }
        }
        Ok(y)
    }

    /// Replaces running statistics with exact `(mean, biased variance)`.
    pub fn set_running_stats(&mut self, mean: &[f64], var: &[f64]) {
        for ch in 0..self.channels() {
            self.running_mean.data_mut()[ch] = S::from_f64c(mean[ch]);
            self.running_var.data_mut()[ch] = S::from_f64c(var[ch]);
        }
    }

    pub fn backward(&self, cache: &BnCache<S>, grad_y: &Tensor<S>) -> Result<BnGrads<S>> {
        grad_y.expect_shape("batchnorm_backward", cache.x_hat.shape())?;
        let c = self.channels();
        let (n, hw) = dims(grad_y, c)?;
        let mut dg = vec![S::zero(); c];
        let mut db = vec![S::zero(); c];
        for (i, (gy, xh)) in grad_y.data().chunks_exact(hw).zip(cache.x_hat.data().chunks_exact(hw)).enumerate() {
            let ch = i % c;
            for (&g, &h) in gy.iter().zip(xh) {
                dg[ch] += g * h;
                db[ch] += g;
            }
        }
        let m = S::from_usize_c(n * hw);
        let mut dx = grad_y.clone();
        for (i, (d, xh)) in dx.data_mut().chunks_exact_mut(hw).zip(cache.x_hat.data().chunks_exact(hw)).enumerate() {
            let ch = i % c;
            let k = self.gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    for (v, &h) in d.iter_mut().zip(xh) {
                        *v = k * (*v - (db[ch] + h * dg[ch]) / m);
                    }
                }
                BnMode::Eval => {
                    for v in d.iter_mut() {
                        *v *= k;
                    }
                }
            }
        }
        Ok(BnGrads {
            gamma: Tensor::from_vec(&[c], dg)?,
            beta: Tensor::from_vec(&[c], db)?,
            x: dx,
        })
    }
}

impl<S: Scalar> StateDict<S> for BatchNorm<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("gamma".into(), &self.gamma),
            ("beta".into(), &self.beta),
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
