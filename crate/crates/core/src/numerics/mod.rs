//! Dense kernels with hand-written backward passes.

mod conv;
mod init;
mod linalg;
mod loss;
mod pool;
mod rng;
mod scalar;
mod tensor;

pub use conv::{col2im_3x3, conv2d_backward, conv2d_forward, im2col_3x3, ConvGrads};
pub use init::{kaiming_uniform_init, uniform_init};
pub use linalg::{
    add_row_vector, argmax_rows, column_sums, matmul, matmul_nt, matmul_tn, softmax_rows,
};
pub use loss::{log_softmax_rows, softmax_crossentropy};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndices};
pub use rng::{RngStream, StreamName};
pub use scalar::Scalar;
pub use tensor::Tensor;
