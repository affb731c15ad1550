//! Central finite-difference oracles for every hand-written backward pass.

use bpfree::algo::ff::{
    ff_gradients, ff_layer_loss, peer_normalization_loss, EmbedValue, FfConfig, FfNetwork, InterLayerNorm, Threshold,
};
use bpfree::algo::mf::{mf_local_grads, MfLayer};
use bpfree::algo::bp::bp_loss_and_grads;
use bpfree::nn::{Activation, BatchNorm, BnMode, ConvBlock, Dense, Mlp, MlpSpec, Model, StateDict};
use bpfree::numerics::{conv2d_backward, conv2d_forward, maxpool2x2_backward, maxpool2x2_forward, softmax_crossentropy};
use bpfree::optim::{EarlyStopConfig, Mode, OptimConfig, OptimizerKind};
use bpfree::Tensor64;

use super::{probe, Gen};

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-5;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, with an absolute floor for all-zero gradients.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

/// Relative error, over all of `params` jointly, between `analytic` and central
/// differences of `f(params, t)`, where `t` is the tensor being perturbed.
pub fn check(params: &[Tensor64], analytic: &[Tensor64], mut f: impl FnMut(&[Tensor64], usize) -> f64) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for t in 0..p.len() {
        assert_eq!(p[t].shape(), analytic[t].shape(), "gradient {t} shape");
        let mut num = vec![0.0; p[t].len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = p[t].data()[i];
            p[t].data_mut()[i] = orig + STEP;
            let fp = f(&p, t);
            p[t].data_mut()[i] = orig - STEP;
            let fm = f(&p, t);
            p[t].data_mut()[i] = orig;
            *slot = (fp - fm) / (2.0 * STEP);
        }
        all_a.extend_from_slice(analytic[t].data());
        all_n.extend(num);
    }
    rel_err(&all_a, &all_n)
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
    pub tol: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.instances >= 100 && self.worst < self.tol
    }
}

fn run(name: &'static str, tol: f64, instances: usize, seed: u64, mut one: impl FnMut(&mut Gen, usize) -> f64) -> SuiteResult {
    let mut g = Gen::new(seed);
    let worst = (0..instances).map(|i| one(&mut g, i)).fold(0.0, f64::max);
    SuiteResult { name, instances, worst, tol }
}

pub fn dense_suite(instances: usize) -> SuiteResult {
    run("dense", TOL, instances, 1, |g, _| {
        let (b, i, o) = (g.dim(1, 5), g.dim(1, 5), g.dim(1, 5));
        let act = if g.coin() { Activation::Relu } else { Activation::None };
        let layer = Dense::from_parts(g.tensor(&[o, i], 1.0), g.tensor(&[o], 0.5), act).unwrap();
        let x = g.tensor(&[b, i], 1.0);
        let r = g.tensor(&[b, o], 1.0);
        let (z, _) = layer.forward(&x).unwrap();
        let d = layer.backward(&x, &z, &r, true).unwrap();
        check(&[layer.w.clone(), layer.b.clone(), x], &[d.w, d.b, d.x.unwrap()], |p, _| {
            let l = Dense::from_parts(p[0].clone(), p[1].clone(), act).unwrap();
            probe(&l.forward(&p[2]).unwrap().1, &r)
        })
    })
}

pub fn conv_suite(instances: usize) -> SuiteResult {
    run("conv", TOL, instances, 2, |g, _| {
        let (n, c, o, h, w) = (g.dim(1, 2), g.dim(1, 3), g.dim(1, 3), g.dim(1, 5), g.dim(1, 5));
        let x = g.tensor(&[n, c, h, w], 1.0);
        let k = g.tensor(&[o, c, 3, 3], 1.0);
        let bias = g.tensor(&[o], 1.0);
        let r = g.tensor(&[n, o, h, w], 1.0);
        let d = conv2d_backward(&x, &k, &r, true).unwrap();
        check(&[x, k, bias], &[d.grad_input.unwrap(), d.grad_kernels, d.grad_bias], |p, _| {
            probe(&conv2d_forward(&p[0], &p[1], Some(&p[2])).unwrap(), &r)
        })
    })
}

pub fn pool_suite(instances: usize) -> SuiteResult {
    run("maxpool", TOL, instances, 3, |g, _| {
        let (n, c, h, w) = (g.dim(1, 2), g.dim(1, 3), g.dim(2, 5), g.dim(2, 5));
        let x = g.tensor(&[n, c, h, w], 1.0);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let r = g.tensor(y.shape(), 1.0);
        let gx = maxpool2x2_backward(&idx, &r).unwrap();
        check(&[x], &[gx], |p, _| probe(&maxpool2x2_forward(&p[0]).unwrap().0, &r))
    })
}

pub fn batchnorm_suite(instances: usize) -> SuiteResult {
    run("batchnorm", TOL, instances, 4, |g, i| {
        // At least four values per channel keeps the batch statistics well conditioned.
        let (n, c, h, w) = (g.dim(2, 4), g.dim(1, 3), g.dim(1, 3), g.dim(2, 3));
        let mode = if i % 4 == 3 { BnMode::Eval } else { BnMode::Train };
        let mut bn = BatchNorm::<f64>::new(c);
        bn.gamma = g.tensor(&[c], 1.0);
        bn.beta = g.tensor(&[c], 1.0);
        bn.running_mean = g.tensor(&[c], 0.5);
        bn.running_var = Tensor64::from_vec(&[c], (0..c).map(|_| g.uniform(0.5, 2.0)).collect()).unwrap();
        let x = g.tensor(&[n, c, h, w], 1.0);
        let r = g.tensor(&[n, c, h, w], 1.0);
        let (_, cache) = bn.clone().forward(&x, mode).unwrap();
        let d = bn.backward(&cache, &r).unwrap();
        check(&[bn.gamma.clone(), bn.beta.clone(), x], &[d.gamma, d.beta, d.x], |p, _| {
            let mut b = bn.clone();
            b.gamma = p[0].clone();
            b.beta = p[1].clone();
            probe(&b.forward(&p[2], mode).unwrap().0, &r)
        })
    })
}

pub fn conv_block_suite(instances: usize) -> SuiteResult {
    run("conv block", BLOCK_TOL, instances, 5, |g, _| {
        let (n, c, o, h, w) = (g.dim(2, 3), g.dim(1, 2), g.dim(1, 3), g.dim(2, 4), g.dim(4, 5));
        let mut block = ConvBlock::<f64>::kaiming(c, o, g.rng());
        block.bias = g.tensor(&[o], 0.3);
        block.bn.gamma = g.tensor(&[o], 1.0);
        block.bn.beta = g.tensor(&[o], 1.0);
        let x = g.tensor(&[n, c, h, w], 1.0);
        let (y, cache) = block.clone().forward(&x, BnMode::Train).unwrap();
        let r = g.tensor(y.shape(), 1.0);
        let d = block.backward(&cache, &r, true).unwrap();
        let params = [
            block.kernels.clone(),
            block.bias.clone(),
            block.bn.gamma.clone(),
            block.bn.beta.clone(),
            x,
        ];
        check(&params, &[d.kernels, d.bias, d.gamma, d.beta, d.x.unwrap()], |p, _| {
            let mut b = block.clone();
            b.kernels = p[0].clone();
            b.bias = p[1].clone();
            b.bn.gamma = p[2].clone();
            b.bn.beta = p[3].clone();
            probe(&b.forward(&p[4], BnMode::Train).unwrap().0, &r)
        })
    })
}

pub fn ff_loss_suite(instances: usize) -> SuiteResult {
    run("ff layer loss", TOL, instances, 6, |g, _| {
        let (np, nn) = (g.dim(1, 6), g.dim(1, 6));
        let theta = g.uniform(0.5, 8.0);
        let gp = Tensor64::from_vec(&[np], (0..np).map(|_| g.uniform(0.0, 10.0)).collect()).unwrap();
        let gn = Tensor64::from_vec(&[nn], (0..nn).map(|_| g.uniform(0.0, 10.0)).collect()).unwrap();
        let (_, dp, dn) = ff_layer_loss(gp.data(), gn.data(), theta);
        let analytic = [Tensor64::from_vec(&[np], dp).unwrap(), Tensor64::from_vec(&[nn], dn).unwrap()];
        check(&[gp, gn], &analytic, |p, _| ff_layer_loss(p[0].data(), p[1].data(), theta).0)
    })
}

fn ff_config(g: &mut Gen) -> FfConfig {
    let opt = OptimConfig::new(OptimizerKind::AdamW, 1e-3, 0.0);
    FfConfig {
        optimizer: opt,
        downstream: opt,
        max_epochs: 1,
        batch_size: 4,
        early_stop: EarlyStopConfig {
            mode: Mode::Maximize,
            patience: 1,
            min_delta: 0.0,
        },
        threshold: if g.coin() { Threshold::Dynamic } else { Threshold::Fixed(g.uniform(0.5, 3.0)) },
        peer_factor: g.uniform(0.0, 0.5),
        peer_momentum: g.uniform(0.0, 0.95),
        normalization: if g.coin() { InterLayerNorm::Rms } else { InterLayerNorm::L2 },
        embed: EmbedValue::ImageMax,
        include_first_layer: true,
        layer_loss_weights: None,
    }
}

pub fn peer_suite(instances: usize) -> SuiteResult {
    run("peer normalization", TOL, instances, 7, |g, _| {
        let (b, n) = (g.dim(1, 5), g.dim(1, 5));
        let a = g.tensor(&[b, n], 1.0).map(f64::abs);
        let rm = g.tensor(&[n], 0.5).map(f64::abs);
        let (factor, momentum) = (g.uniform(0.01, 1.0), g.uniform(0.0, 0.95));
        let (_, grad) = peer_normalization_loss(&a, &mut rm.clone(), factor, momentum).unwrap();
        check(&[a], &[grad], |p, _| peer_normalization_loss(&p[0], &mut rm.clone(), factor, momentum).unwrap().0)
    })
}

/// Local FF gradients of a whole network: layer `k`'s tensors against its own
/// goodness plus peer loss, the classifier against its cross-entropy.
pub fn ff_network_suite(instances: usize) -> SuiteResult {
    run("ff network", TOL, instances, 8, |g, _| {
        let nc = g.dim(2, 3);
        let input = g.dim(nc, 6);
        let hidden: Vec<usize> = (0..g.dim(1, 3)).map(|_| g.dim(2, 5)).collect();
        let b = g.dim(1, 4);
        let cfg = ff_config(g);
        let mut net = FfNetwork::<f64>::new(input, &hidden, nc, cfg.threshold, cfg.normalization, g.rng()).unwrap();
        for l in &mut net.layers {
            l.b = g.tensor(l.b.shape(), 0.3);
        }
        for rm in &mut net.running_mean {
            *rm = g.tensor(rm.shape(), 0.3).map(f64::abs);
        }
        let x = g.tensor(&[b, input], 1.0).map(f64::abs);
        let labels = g.labels(b, nc);
        let neg: Vec<usize> = labels.iter().map(|&l| (l + 1) % nc).collect();
        let (grads, _) = ff_gradients(&mut net.clone(), &x, &labels, &neg, &cfg).unwrap();
        let mut params: Vec<Tensor64> = net.layers.iter().flat_map(|l| [l.w.clone(), l.b.clone()]).collect();
        params.push(net.classifier.w.clone());
        params.push(net.classifier.b.clone());
        let nl = net.layers.len();
        check(&params, &grads, |p, t| {
            let mut n = net.clone();
            for (k, l) in n.layers.iter_mut().enumerate() {
                l.w = p[2 * k].clone();
                l.b = p[2 * k + 1].clone();
            }
            n.classifier.w = p[2 * nl].clone();
            n.classifier.b = p[2 * nl + 1].clone();
            let (_, s) = ff_gradients(&mut n, &x, &labels, &neg, &cfg).unwrap();
            let k = t / 2;
            if k < nl {
                s.layer_loss[k] + s.peer_loss[k]
            } else {
                s.classifier_loss
            }
        })
    })
}

pub fn mf_suite(instances: usize) -> SuiteResult {
    run("mf local step", TOL, instances, 9, |g, i| {
        let (input, width, classes) = if i == 0 { (5, 4, 3) } else { (g.dim(1, 6), g.dim(1, 5), g.dim(2, 4)) };
        let b = g.dim(1, 5);
        let mut layer = MfLayer::<f64>::new(input, width, classes, g.coin(), g.rng());
        layer.dense.b = g.tensor(&[width], 0.3);
        let x = g.tensor(&[b, input], 1.0);
        let labels = g.labels(b, classes);
        let (_, d) = mf_local_grads(&layer, &x, &labels).unwrap();
        let params = [layer.dense.w.clone(), layer.dense.b.clone(), layer.m.clone()];
        check(&params, &[d.w, d.b, d.m], |p, _| {
            let mut l = layer.clone();
            l.dense.w = p[0].clone();
            l.dense.b = p[1].clone();
            l.m = p[2].clone();
            mf_local_grads(&l, &x, &labels).unwrap().0
        })
    })
}

pub fn predictor_suite(instances: usize) -> SuiteResult {
    run("predictor cross-entropy", TOL, instances, 10, |g, _| {
        let (b, d, classes) = (g.dim(1, 5), g.dim(1, 8), g.dim(2, 5));
        let pred = Dense::from_parts(g.tensor(&[classes, d], 1.0), g.tensor(&[classes], 0.5), Activation::None).unwrap();
        let x = g.tensor(&[b, d], 1.0);
        let labels = g.labels(b, classes);
        let (_, gl) = softmax_crossentropy(&pred.pre_activation(&x).unwrap(), &labels).unwrap();
        let dg = pred.backward_from_gz(&x, &gl, true).unwrap();
        check(&[pred.w.clone(), pred.b.clone(), x], &[dg.w, dg.b, dg.x.unwrap()], |p, _| {
            let l = Dense::from_parts(p[0].clone(), p[1].clone(), Activation::None).unwrap();
            softmax_crossentropy(&l.pre_activation(&p[2]).unwrap(), &labels).unwrap().0
        })
    })
}

/// End-to-end backprop through a small MLP.
pub fn bp_mlp_suite(instances: usize) -> SuiteResult {
    run("bp network", TOL, instances, 11, |g, i| {
        let hidden = if i == 0 { vec![3] } else { (0..g.dim(1, 3)).map(|_| g.dim(1, 5)).collect() };
        let (input, classes) = if i == 0 { (4, 2) } else { (g.dim(1, 5), g.dim(2, 4)) };
        let b = g.dim(1, 5);
        let spec = MlpSpec {
            input_dim: input,
            hidden,
            num_classes: classes,
            final_head: true,
        };
        let mut model = Model::Mlp(Mlp::<f64>::new_unchecked(spec, g.rng()));
        for t in model.params_mut() {
            if t.rank() == 1 {
                *t = g.tensor(t.shape(), 0.3);
            }
        }
        let x = g.tensor(&[b, input], 1.0);
        let labels = g.labels(b, classes);
        let (_, grads) = bp_loss_and_grads(&mut model.clone(), &x, &labels).unwrap();
        let params: Vec<Tensor64> = model.clone().params_mut().into_iter().map(|t| t.clone()).collect();
        check(&params, &grads, |p, _| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(p) {
                *dst = src.clone();
            }
            bp_loss_and_grads(&mut m, &x, &labels).unwrap().0
        })
    })
}

/// Every suite at the given instance count.
pub fn all_suites(instances: usize) -> Vec<SuiteResult> {
    vec![
        dense_suite(instances),
        conv_suite(instances),
        pool_suite(instances),
        batchnorm_suite(instances),
        conv_block_suite(instances),
        ff_loss_suite(instances),
        peer_suite(instances),
        ff_network_suite(instances),
        mf_suite(instances),
        predictor_suite(instances),
        bp_mlp_suite(instances),
    ]
}
