//! 3×3 convolution, stride 1, zero padding 1, via batch-wide im2col + GEMM.

use crate::error::{Error, Result};

use super::scalar::gemm;
use super::{Scalar, Tensor};

/// Unfolds `n×c×h×w` into a `(c·9) × (n·h·w)` row-major matrix.
pub fn im2col_3x3<S: Scalar>(x: &[S], n: usize, c: usize, h: usize, w: usize) -> Vec<S> {
    let hw = h * w;
    let cols = n * hw;
    let mut out = vec![S::zero(); c * 9 * cols];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for ni in 0..n {
                    let src = &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let dst = &mut out[row + ni * hw..row + (ni + 1) * hw];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let (x_lo, x_hi) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                        for xo in x_lo..x_hi {
                            dst[y * w + xo] = src[sy * w + xo + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col_3x3`]: folds columns back, summing overlaps.
pub fn col2im_3x3<S: Scalar>(col: &[S], n: usize, c: usize, h: usize, w: usize) -> Vec<S> {
    let hw = h * w;
    let cols = n * hw;
    let mut out = vec![S::zero(); n * c * hw];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for ni in 0..n {
                    let src = &col[row + ni * hw..row + (ni + 1) * hw];
                    let dst = &mut out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let (x_lo, x_hi) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                        for xo in x_lo..x_hi {
                            dst[sy * w + xo + kx - 1] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_shapes<S: Scalar>(
    op: &'static str,
    input: &Tensor<S>,
    kernels: &Tensor<S>,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::shape(op, "input N×C×H×W", format!("rank {}", input.rank())));
    }
    if kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3 {
        return Err(Error::shape(op, "kernels O×C×3×3", format!("{:?}", kernels.shape())));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if kernels.dim(1) != c {
        return Err(Error::shape(
            op,
            format!("{c} kernel input channels"),
            format!("{}", kernels.dim(1)),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape(op, "non-empty spatial dims", format!("{h}×{w}")));
    }
    Ok((n, c, h, w, kernels.dim(0)))
}

/// Cross-correlation with zero padding 1; output keeps `H×W`.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let (n, c, h, w, o) = check_shapes("conv2d_forward", input, kernels)?;
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::shape("conv2d_forward", format!("bias {o}"), format!("{}", b.len())));
        }
    }
    let hw = h * w;
    let cols = n * hw;
    let col = im2col_3x3(input.data(), n, c, h, w);
    let mut y = vec![S::zero(); o * cols];
    gemm(false, false, o, c * 9, cols, S::one(), kernels.data(), &col, S::zero(), &mut y);
    let mut out = vec![S::zero(); n * o * hw];
    for oi in 0..o {
        let b = bias.map_or(S::zero(), |b| b.data()[oi]);
        for ni in 0..n {
            let src = &y[oi * cols + ni * hw..oi * cols + (ni + 1) * hw];
            let dst = &mut out[(ni * o + oi) * hw..(ni * o + oi + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    Tensor::from_vec(&[n, o, h, w], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<S> {
    pub grad_input: Option<Tensor<S>>,
    pub grad_kernels: Tensor<S>,
    pub grad_bias: Tensor<S>,
}

/// Exact adjoint of [`conv2d_forward`]. `want_input` skips the input gradient when false.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    grad_out: &Tensor<S>,
    want_input: bool,
) -> Result<ConvGrads<S>> {
    let (n, c, h, w, o) = check_shapes("conv2d_backward", input, kernels)?;
    grad_out.expect_shape("conv2d_backward", &[n, o, h, w])?;
    let hw = h * w;
    let cols = n * hw;
    // grad_out as O × (N·HW)
    let mut g = vec![S::zero(); o * cols];
    let mut gb = vec![S::zero(); o];
    for ni in 0..n {
        for oi in 0..o {
            let src = &grad_out.data()[(ni * o + oi) * hw..(ni * o + oi + 1) * hw];
            g[oi * cols + ni * hw..oi * cols + (ni + 1) * hw].copy_from_slice(src);
            gb[oi] += src.iter().copied().sum::<S>();
        }
    }
    let col = im2col_3x3(input.data(), n, c, h, w);
    let mut gk = vec![S::zero(); o * c * 9];
    gemm(false, true, o, cols, c * 9, S::one(), &g, &col, S::zero(), &mut gk);
    drop(col);
    let grad_input = if want_input {
        let mut gcol = vec![S::zero(); c * 9 * cols];
        gemm(true, false, c * 9, o, cols, S::one(), kernels.data(), &g, S::zero(), &mut gcol);
        let gi = col2im_3x3(&gcol, n, c, h, w);
        Some(Tensor::from_vec(&[n, c, h, w], gi)?)
    } else {
        None
    };
    Ok(ConvGrads {
        grad_input,
        grad_kernels: Tensor::from_vec(kernels.shape(), gk)?,
        grad_bias: Tensor::from_vec(&[o], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_kernel(c: usize) -> Tensor<f64> {
        let mut k = Tensor::zeros(&[c, c, 3, 3]);
        for i in 0..c {
            k.data_mut()[(i * c + i) * 9 + 4] = 1.0;
        }
        k
    }

    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let o = k.dim(0);
        let mut out = Tensor::zeros(&[n, o, h, w]);
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += x.data()[((ni * c + ci) * h + sy as usize) * w + sx as usize]
                                        * k.data()[((oi * c + ci) * 3 + ky as usize) * 3 + kx as usize];
                                }
                            }
                        }
                        out.data_mut()[((ni * o + oi) * h + y as usize) * w + xx as usize] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], salt: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + salt) * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = pseudo(&[2, 1, 4, 5], 0.0);
        let y = conv2d_forward(&x, &delta_kernel(1), None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_interior_sums_nine_per_channel() {
        let c = 3;
        let x = Tensor::<f64>::full(&[1, c, 5, 5], 1.0);
        let k = Tensor::<f64>::full(&[1, c, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, None).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0 * c as f64);
        assert_eq!(y.data()[0], 4.0 * c as f64);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        let y = conv2d_forward(&x, &pseudo(&[4, 2, 3, 3], 1.0), None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_convolution() {
        let x = pseudo(&[2, 3, 5, 4], 0.3);
        let k = pseudo(&[4, 3, 3, 3], 2.0);
        let a = conv2d_forward(&x, &k, None).unwrap();
        let b = naive_conv(&x, &k);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &k, None), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = pseudo(&[1, 2, 3, 3], 0.0);
        let k = pseudo(&[2, 2, 3, 3], 1.0);
        let g = conv2d_backward(&x, &k, &Tensor::zeros(&[1, 2, 3, 3]), true).unwrap();
        assert_eq!(g.grad_kernels.max_abs(), 0.0);
        assert_eq!(g.grad_input.unwrap().max_abs(), 0.0);
        assert_eq!(g.grad_bias.max_abs(), 0.0);
    }

    #[test]
    fn delta_kernel_adjoint_passes_grad_through() {
        let x = pseudo(&[1, 1, 3, 3], 0.0);
        let go = pseudo(&[1, 1, 3, 3], 5.0);
        let g = conv2d_backward(&x, &delta_kernel(1), &go, true).unwrap();
        assert_eq!(g.grad_input.unwrap(), go);
    }

    #[test]
    fn delta_kernel_weight_grad_is_windowed_correlation() {
        let x = pseudo(&[1, 1, 3, 3], 0.0);
        let go = pseudo(&[1, 1, 3, 3], 5.0);
        let g = conv2d_backward(&x, &delta_kernel(1), &go, false).unwrap();
        for ky in 0..3isize {
            for kx in 0..3isize {
                let mut s = 0.0;
                for y in 0..3isize {
                    for xx in 0..3isize {
                        let (sy, sx) = (y + ky - 1, xx + kx - 1);
                        if (0..3).contains(&sy) && (0..3).contains(&sx) {
                            s += x.data()[(sy * 3 + sx) as usize] * go.data()[(y * 3 + xx) as usize];
                        }
                    }
                }
                let got = g.grad_kernels.data()[(ky * 3 + kx) as usize];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (n, c, h, w) = (2, 2, 3, 4);
        let x = pseudo(&[n, c, h, w], 0.0);
        let y: Vec<f64> = (0..c * 9 * n * h * w).map(|i| (i as f64 * 0.17).cos()).collect();
        let lhs: f64 = im2col_3x3(x.data(), n, c, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = col2im_3x3(&y, n, c, h, w).iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
