use crate::numerics::{Scalar, Tensor};

pub const LENGTH_NORM_EPS: f64 = 1e-8;

/// Divides each row by `‖row‖₂ + eps`.
pub fn length_normalize<S: Scalar>(x: &Tensor<S>, eps: f64) -> Tensor<S> {
    scale_rows(x, |ss, _| S::one() / (ss.sqrt() + S::from_f64c(eps)))
}

/// Divides each row by `sqrt(mean(row²)) + eps`, i.e. rescales to norm `sqrt(n)`.
pub fn rms_normalize<S: Scalar>(x: &Tensor<S>, eps: f64) -> Tensor<S> {
    scale_rows(x, |ss, n| S::one() / ((ss / n).sqrt() + S::from_f64c(eps)))
}

fn scale_rows<S: Scalar>(x: &Tensor<S>, factor: impl Fn(S, S) -> S) -> Tensor<S> {
    let n = x.row_len();
    let nn = S::from_usize_c(n.max(1));
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n.max(1)) {
        let ss: S = row.iter().map(|&v| v * v).sum();
        let f = factor(ss, nn);
        for v in row.iter_mut() {
            *v *= f;
        }
    }
    out
}
