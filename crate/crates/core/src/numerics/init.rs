use super::{RngStream, Scalar, Tensor};

/// I.i.d. uniform on `[-bound, bound]`.
pub fn uniform_init<S: Scalar>(shape: &[usize], bound: f64, rng: &mut RngStream) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64c(rng.uniform(-bound, bound))).collect();
    Tensor::from_vec(shape, data).expect("valid shape")
}

/// Kaiming uniform: bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform_init<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<S> {
    assert!(fan_in > 0, "fan_in must be positive");
    uniform_init(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
