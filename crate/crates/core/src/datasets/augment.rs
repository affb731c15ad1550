use serde::{Deserialize, Serialize};

use crate::numerics::{RngStream, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentPolicy {
    Identity,
    /// Horizontal flip with probability `flip_p`, then zero-pad by `pad` and crop back.
    FlipCrop { flip_p: f64, pad: usize },
}

impl AugmentPolicy {
    pub fn cifar() -> Self {
        AugmentPolicy::FlipCrop { flip_p: 0.5, pad: 4 }
    }
}

/// Mirrors one `C×H×W` image left-right in place.
pub fn flip_horizontal<S: Scalar>(img: &mut [S], c: usize, h: usize, w: usize) {
    for row in img[..c * h * w].chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Crop of the zero-padded image at offset `(dy, dx)` in padded coordinates.
pub fn pad_crop<S: Scalar>(img: &[S], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<S> {
    let mut out = vec![S::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = y + dy;
            if sy < pad || sy >= h + pad {
                continue;
            }
            for x in 0..w {
                let sx = x + dx;
                if sx < pad || sx >= w + pad {
                    continue;
                }
                out[(ch * h + y) * w + x] = img[(ch * h + sy - pad) * w + sx - pad];
            }
        }
    }
    out
}

/// Applies `policy` independently to each image of an `N×C×H×W` batch.
pub fn augment<S: Scalar>(batch: &Tensor<S>, policy: &AugmentPolicy, rng: &mut RngStream) -> Tensor<S> {
    let AugmentPolicy::FlipCrop { flip_p, pad } = *policy else {
        return batch.clone();
    };
    let (c, h, w) = (batch.dim(1), batch.dim(2), batch.dim(3));
    let mut out = batch.clone();
    for i in 0..batch.dim(0) {
        let img = out.row_mut(i);
        if rng.bernoulli(flip_p) {
            flip_horizontal(img, c, h, w);
        }
        let dy = rng.below(2 * pad + 1);
        let dx = rng.below(2 * pad + 1);
        let cropped = pad_crop(img, c, h, w, pad, dy, dx);
        img.copy_from_slice(&cropped);
    }
    out
}
