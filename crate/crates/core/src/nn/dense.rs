use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add_row_vector, column_sums, kaiming_uniform_init, matmul, matmul_nt, matmul_tn, RngStream, Scalar, Tensor,
};

use super::StateDict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// `z = x Wᵀ + b`, `a = f(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub x: Option<Tensor<S>>,
}

/// `grad ⊙ 1[z > 0]`, so the derivative at zero is zero.
pub fn relu_backward_mask<S: Scalar>(grad: &Tensor<S>, z: &Tensor<S>) -> Tensor<S> {
    let mut g = grad.clone();
    for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
        if zv <= S::zero() {
            *gv = S::zero();
        }
    }
    g
}

impl<S: Scalar> Dense<S> {
    /// Kaiming-uniform weights (fan_in = `input`), zero bias.
    pub fn kaiming(input: usize, output: usize, activation: Activation, rng: &mut RngStream) -> Self {
        Dense {
            w: kaiming_uniform_init(&[output, input], input, rng),
            b: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn from_parts(w: Tensor<S>, b: Tensor<S>, activation: Activation) -> Result<Self> {
        if w.rank() != 2 || b.len() != w.dim(0) {
            return Err(Error::shape("Dense", "W out×in, b out", format!("{:?} / {:?}", w.shape(), b.shape())));
        }
        Ok(Dense { w, b, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.w.dim(1)
    }

    pub fn output_dim(&self) -> usize {
        self.w.dim(0)
    }

    pub fn pre_activation(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() != 2 || x.dim(1) != self.input_dim() {
            return Err(Error::shape(
                "dense_forward",
                format!("B×{}", self.input_dim()),
                format!("{:?}", x.shape()),
            ));
        }
        let mut z = matmul_nt(x, &self.w)?;
        add_row_vector(&mut z, &self.b)?;
        Ok(z)
    }

    pub fn activate(&self, z: &Tensor<S>) -> Tensor<S> {
        match self.activation {
            Activation::Relu => z.map(|v| v.max(S::zero())),
            Activation::None => z.clone(),
        }
    }

    /// Returns `(z, a)`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let z = self.pre_activation(x)?;
        let a = self.activate(&z);
        Ok((z, a))
    }

    /// Activations only.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut z = self.pre_activation(x)?;
        if self.activation == Activation::Relu {
            for v in z.data_mut() {
                *v = v.max(S::zero());
            }
        }
        Ok(z)
    }

    /// Gradients from the cached input `x` and pre-activation `z`.
    /// `want_x` controls whether the input gradient is produced.
    pub fn backward(&self, x: &Tensor<S>, z: &Tensor<S>, grad_a: &Tensor<S>, want_x: bool) -> Result<DenseGrads<S>> {
        grad_a.expect_shape("dense_backward", z.shape())?;
        let gz = match self.activation {
            Activation::Relu => relu_backward_mask(grad_a, z),
            Activation::None => grad_a.clone(),
        };
        self.backward_from_gz(x, &gz, want_x)
    }

    /// Same as [`Dense::backward`] with `∂L/∂z` already formed.
    pub fn backward_from_gz(&self, x: &Tensor<S>, gz: &Tensor<S>, want_x: bool) -> Result<DenseGrads<S>> {
        let w = matmul_tn(gz, x)?;
        let b = column_sums(gz);
        let gx = if want_x { Some(matmul(gz, &self.w)?) } else { None };
        Ok(DenseGrads { w, b, x: gx })
    }
}

impl<S: Scalar> StateDict<S> for Dense<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        vec![("weight".into(), &self.w), ("bias".into(), &self.b)]
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![("weight".into(), &mut self.w), ("bias".into(), &mut self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w, &mut self.b]
    }
}
