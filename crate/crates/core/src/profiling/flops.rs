use serde::{Deserialize, Serialize};

use crate::algo::Algorithm;
use crate::datasets::DatasetMeta;
use crate::error::{Error, Result};
use crate::nn::{Architecture, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopStage {
    pub name: String,
    pub macs: u64,
    pub gflops: f64,
}

/// Per-sample cost, counting one multiply-accumulate as two FLOPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub algorithm: Algorithm,
    pub f_fwd_gflops: f64,
    /// Cost of one BP update on the comparable backprop model (3 × its forward pass).
    pub f_bp_update_gflops: f64,
    pub stages: Vec<FlopStage>,
    /// Convolution stages only (0 for MLPs).
    pub conv_gflops: f64,
}

fn gflops(macs: u64) -> f64 {
    2.0 * macs as f64 / 1e9
}

fn stage(name: String, macs: u64) -> FlopStage {
    FlopStage { name, macs, gflops: gflops(macs) }
}

fn dense(name: &str, input: usize, output: usize) -> FlopStage {
    stage(format!("{name} {input}→{output}"), (input * output) as u64)
}

/// Stages on the inference path of `algo` for `spec` (any head flag in the
/// spec is ignored; the algorithm decides what is counted).
fn stages(spec: &ModelSpec, algo: Algorithm) -> Result<Vec<FlopStage>> {
    spec.validate()?;
    let mut out = Vec::new();
    match (spec, algo) {
        (ModelSpec::Mlp(m), Algorithm::Bp | Algorithm::Ff | Algorithm::Mf) => {
            let mut prev = m.input_dim;
            for (i, &h) in m.hidden.iter().enumerate() {
                out.push(dense(&format!("hidden{}", i + 1), prev, h));
                prev = h;
            }
            match algo {
                Algorithm::Bp => out.push(dense("head", prev, m.num_classes)),
                Algorithm::Mf => out.push(dense("projection", prev, m.num_classes)),
                _ => {}
            }
        }
        (ModelSpec::Cnn(c), Algorithm::Bp | Algorithm::Cafo) => {
            let mut cin = c.channels;
            let (mut h, mut w) = (c.height, c.width);
            for (i, &o) in c.block_channels.iter().enumerate() {
                out.push(stage(format!("conv{} {cin}→{o} @{h}×{w}", i + 1), (o * cin * 9 * h * w) as u64));
                cin = o;
                h /= 2;
                w /= 2;
            }
            let flat = c.flat_dims();
            if algo == Algorithm::Bp {
                out.push(dense("head", *flat.last().expect("blocks"), c.num_classes));
            } else {
                for (i, &d) in flat.iter().enumerate() {
                    out.push(dense(&format!("predictor{}", i + 1), d, c.num_classes));
                }
            }
        }
        _ => {
            return Err(Error::UnknownArchitecture(format!(
                "{algo} is not defined on {}",
                match spec {
                    ModelSpec::Mlp(_) => "an MLP",
                    ModelSpec::Cnn(_) => "a CNN",
                }
            )))
        }
    }
    Ok(out)
}

/// Per-sample GFLOPs of one BP update (forward plus backward) for `spec` with a head.
pub fn estimate_bp_update_flops(spec: &ModelSpec) -> Result<f64> {
    let macs: u64 = stages(spec, Algorithm::Bp)?.iter().map(|s| s.macs).sum();
    Ok(3.0 * gflops(macs))
}

pub fn estimate_forward_flops(spec: &ModelSpec, algo: Algorithm) -> Result<FlopsReport> {
    let st = stages(spec, algo)?;
    let macs: u64 = st.iter().map(|s| s.macs).sum();
    let conv: u64 = st.iter().filter(|s| s.name.starts_with("conv")).map(|s| s.macs).sum();
    Ok(FlopsReport {
        algorithm: algo,
        f_fwd_gflops: gflops(macs),
        f_bp_update_gflops: estimate_bp_update_flops(spec)?,
        stages: st,
        conv_gflops: gflops(conv),
    })
}

/// Convenience wrapper over the architecture catalog.
pub fn estimate_flops(algo: Algorithm, arch: Architecture, meta: &DatasetMeta) -> Result<FlopsReport> {
    estimate_forward_flops(&ModelSpec::for_arch(arch, meta, true), algo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DatasetKind;

    #[test]
    fn mf_mnist_2x1000() {
        let r = estimate_flops(Algorithm::Mf, Architecture::Mlp2x1000, &DatasetKind::Mnist.meta()).unwrap();
        let oracle = 2.0 * (784.0 * 1000.0 + 1000.0 * 1000.0 + 10.0 * 1000.0) / 1e9;
        assert!((r.f_fwd_gflops - oracle).abs() < 1e-15);
        assert!((r.f_bp_update_gflops - 3.0 * oracle).abs() < 1e-15);
    }

    #[test]
    fn ff_needs_mlp() {
        assert!(estimate_flops(Algorithm::Ff, Architecture::Cnn3Block, &DatasetKind::Mnist.meta()).is_err());
        assert!(estimate_flops(Algorithm::Cafo, Architecture::Mlp4x2000, &DatasetKind::Mnist.meta()).is_err());
    }

    #[test]
    fn stages_sum_to_total() {
        for kind in [DatasetKind::Mnist, DatasetKind::Cifar100] {
            let r = estimate_flops(Algorithm::Cafo, Architecture::Cnn3Block, &kind.meta()).unwrap();
            let s: f64 = r.stages.iter().map(|s| s.gflops).sum();
            assert!((s - r.f_fwd_gflops).abs() < 1e-12);
        }
    }
}
