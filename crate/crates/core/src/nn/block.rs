use crate::error::Result;
use crate::numerics::{
    conv2d_backward, conv2d_forward, kaiming_uniform_init, maxpool2x2_backward, maxpool2x2_forward, PoolIndices,
    RngStream, Scalar, Tensor,
};

use super::{prefixed, prefixed_mut, relu_backward_mask, BatchNorm, BnCache, BnMode, StateDict};

/// Conv(3×3, same) → ReLU → MaxPool(2×2) → BatchNorm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<S> {
    pub kernels: Tensor<S>,
    pub bias: Tensor<S>,
    pub bn: BatchNorm<S>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<S> {
    input: Tensor<S>,
    z: Tensor<S>,
    pool: PoolIndices,
    bn: BnCache<S>,
}

#[derive(Clone, Debug)]
pub struct BlockGrads<S> {
    pub kernels: Tensor<S>,
    pub bias: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub x: Option<Tensor<S>>,
}

impl<S: Scalar> BlockGrads<S> {
    /// Gradients in [`StateDict::params_mut`] order.
    pub fn params(&self) -> Vec<&Tensor<S>> {
        vec![&self.kernels, &self.bias, &self.gamma, &self.beta]
    }
}

impl<S: Scalar> ConvBlock<S> {
    pub fn kaiming(in_channels: usize, out_channels: usize, rng: &mut RngStream) -> Self {
        ConvBlock {
            kernels: kaiming_uniform_init(&[out_channels, in_channels, 3, 3], in_channels * 9, rng),
            bias: Tensor::zeros(&[out_channels]),
            bn: BatchNorm::new(out_channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim(0)
    }

    /// Output `(C, H, W)` for an input of spatial size `h×w`.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize, usize) {
        (self.out_channels(), h / 2, w / 2)
    }

    /// Conv → ReLU → pool, before BatchNorm.
    pub fn pre_bn(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut z = conv2d_forward(x, &self.kernels, Some(&self.bias))?;
        for v in z.data_mut() {
            *v = v.max(S::zero());
        }
        Ok(maxpool2x2_forward(&z)?.0)
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: BnMode) -> Result<(Tensor<S>, BlockCache<S>)> {
        let z = conv2d_forward(x, &self.kernels, Some(&self.bias))?;
        let a = z.map(|v| v.max(S::zero()));
        let (p, pool) = maxpool2x2_forward(&a)?;
        drop(a);
        let (y, bn) = self.bn.forward(&p, mode)?;
        Ok((
            y,
            BlockCache {
                input: x.clone(),
                z,
                pool,
                bn,
            },
        ))
    }

    /// Eval-mode forward without caches.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.bn.infer(&self.pre_bn(x)?)
    }

    /// Adjoint chain BN → pool → ReLU → conv.
    pub fn backward(&self, cache: &BlockCache<S>, grad_y: &Tensor<S>, want_x: bool) -> Result<BlockGrads<S>> {
        let bn = self.bn.backward(&cache.bn, grad_y)?;
        let ga = maxpool2x2_backward(&cache.pool, &bn.x)?;
        let gz = relu_backward_mask(&ga, &cache.z);
        let conv = conv2d_backward(&cache.input, &self.kernels, &gz, want_x)?;
        Ok(BlockGrads {
            kernels: conv.grad_kernels,
            bias: conv.grad_bias,
            gamma: bn.gamma,
            beta: bn.beta,
            x: conv.grad_input,
        })
    }
}

impl<S: Scalar> StateDict<S> for ConvBlock<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = vec![("kernels".to_string(), &self.kernels), ("bias".to_string(), &self.bias)];
        v.extend(prefixed("bn", self.bn.named_state()));
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v = vec![("kernels".to_string(), &mut self.kernels), ("bias".to_string(), &mut self.bias)];
        v.extend(prefixed_mut("bn", self.bn.named_state_mut()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.kernels, &mut self.bias, &mut self.bn.gamma, &mut self.bn.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamName;

    #[test]
    fn mnist_and_cifar_spatial_chains() {
        let mut r = RngStream::new(StreamName::WeightInit, 0);
        for (c, side, want) in [(1usize, 28usize, [14usize, 7, 3]), (3, 32, [16, 8, 4])] {
            let blocks: Vec<ConvBlock<f32>> = vec![
                ConvBlock::kaiming(c, 32, &mut r),
                ConvBlock::kaiming(32, 128, &mut r),
                ConvBlock::kaiming(128, 512, &mut r),
            ];
            let mut x = Tensor::<f32>::zeros(&[1, c, side, side]);
            for (b, &s) in blocks.iter().zip(&want) {
                x = b.infer(&x).unwrap();
                assert_eq!(&x.shape()[2..], &[s, s]);
            }
            assert_eq!(x.dim(1), 512);
        }
    }
}
