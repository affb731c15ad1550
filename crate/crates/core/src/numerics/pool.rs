use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Flat input offsets of each pooled maximum plus the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2×2 max pooling, stride 2, floor on odd dims.
/// Ties go to the first element in row-major window order.
pub fn maxpool2x2_forward<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, PoolIndices)> {
    if input.rank() != 4 {
        return Err(Error::shape("maxpool2x2", "N×C×H×W", format!("rank {}", input.rank())));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2x2", "H, W ≥ 2", format!("{h}×{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ho {
            for xx in 0..wo {
                let r0 = base + 2 * y * w + 2 * xx;
                let cand = [r0, r0 + 1, r0 + w, r0 + w + 1];
                let mut best = cand[0];
                for &p in &cand[1..] {
                    if x[p] > x[best] {
                        best = p;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n, c, ho, wo], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax: idx,
        },
    ))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2x2_backward<S: Scalar>(idx: &PoolIndices, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if grad_out.len() != idx.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            format!("{} gradients", idx.argmax.len()),
            format!("{}", grad_out.len()),
        ));
    }
    let mut g = Tensor::zeros(&idx.input_shape);
    let gd = g.data_mut();
    for (&p, &v) in idx.argmax.iter().zip(grad_out.data()) {
        gd[p] += v;
    }
    Ok(g)
}
