//! Layers, blocks and the architecture catalog.

mod batchnorm;
mod block;
mod checkpoint;
mod dense;
mod model;
mod norm;

use crate::numerics::{Scalar, Tensor};

pub use batchnorm::{BatchNorm, BnCache, BnGrads, BnMode};
pub use block::{BlockCache, BlockGrads, ConvBlock};
pub use checkpoint::Checkpoint;
pub use dense::{relu_backward_mask, Activation, Dense, DenseGrads};
pub use model::{build_model, Architecture, Cnn, CnnCache, CnnSpec, Mlp, MlpCache, MlpSpec, Model, ModelSpec};
pub use norm::{length_normalize, rms_normalize, LENGTH_NORM_EPS};

/// Named access to every tensor a component owns.
///
/// `named_state` lists parameters and buffers (e.g. running statistics);
/// `params_mut` lists only the trainable tensors, in a stable order.
pub trait StateDict<S: Scalar> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)>;
    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<S>>;

    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.len()).sum()
    }
}

pub(crate) fn prefixed<'a, S>(prefix: &str, items: Vec<(String, &'a Tensor<S>)>) -> Vec<(String, &'a Tensor<S>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a, S>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor<S>)>,
) -> Vec<(String, &'a mut Tensor<S>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}
