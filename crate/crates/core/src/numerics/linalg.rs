use crate::error::{Error, Result};

use super::scalar::gemm;
use super::{Scalar, Tensor};

fn as_matrix<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, "rank 2", format!("rank {}", t.rank())));
    }
    Ok((t.dim(0), t.dim(1)))
}

/// `A (m×k) · B (k×n)`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = as_matrix("matmul", a)?;
    let (k2, n) = as_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dim {k}"), format!("{k2}")));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(false, false, m, k, n, S::one(), a.data(), b.data(), S::zero(), c.data_mut());
    Ok(c)
}

/// `A (m×k) · Bᵀ` where `B` is `n×k`.
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = as_matrix("matmul_nt", a)?;
    let (n, k2) = as_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", format!("inner dim {k}"), format!("{k2}")));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(false, true, m, k, n, S::one(), a.data(), b.data(), S::zero(), c.data_mut());
    Ok(c)
}

/// `Aᵀ · B` where `A` is `k×m` and `B` is `k×n`.
pub fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (k, m) = as_matrix("matmul_tn", a)?;
    let (k2, n) = as_matrix("matmul_tn", b)?;
    if k != k2 {
        return Err(Error::shape("matmul_tn", format!("inner dim {k}"), format!("{k2}")));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(true, false, m, k, n, S::one(), a.data(), b.data(), S::zero(), c.data_mut());
    Ok(c)
}

/// Adds `v` to every row of `x` in place.
pub fn add_row_vector<S: Scalar>(x: &mut Tensor<S>, v: &Tensor<S>) -> Result<()> {
    let (_, n) = as_matrix("add_row_vector", x)?;
    if v.len() != n {
        return Err(Error::shape("add_row_vector", format!("{n}"), format!("{}", v.len())));
    }
    let vd = v.data();
    for row in x.data_mut().chunks_exact_mut(n) {
        for (a, &b) in row.iter_mut().zip(vd) {
            *a += b;
        }
    }
    Ok(())
}

pub fn column_sums<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = x.row_len();
    let mut out = vec![S::zero(); n];
    for row in x.data().chunks_exact(n.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_vec(&[n], out).expect("rank 1")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = x.row_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_rows<S: Scalar>(x: &Tensor<S>) -> Vec<usize> {
    let n = x.row_len();
    x.data()
        .chunks_exact(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
