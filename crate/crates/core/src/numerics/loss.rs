use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Row-wise log-softmax, stabilised by the row maximum.
pub fn log_softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let m = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(m) {
        let mx = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let lse = row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln() + mx;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/B`.
pub fn softmax_crossentropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax_crossentropy", "B×m", format!("rank {}", logits.rank())));
    }
    let (b, m) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::shape("softmax_crossentropy", format!("{b} labels"), format!("{}", labels.len())));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("softmax_crossentropy needs at least 2 classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::LabelOutOfRange { label: bad, classes: m });
    }
    let logp = log_softmax_rows(logits);
    let inv_b = S::one() / S::from_usize_c(b);
    let mut loss = S::zero();
    let mut grad = logp.map(|v| v.exp() * inv_b);
    for (i, &l) in labels.iter().enumerate() {
        loss -= logp.data()[i * m + l];
        grad.data_mut()[i * m + l] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}
