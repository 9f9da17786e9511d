//! Fully connected layer.

use crate::error::{Error, Result};
use crate::nn::linalg::{acc_outer_t, addmm_nn, addmm_nt};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// `y = x . W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<S: Scalar = f32> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Debug)]
pub struct DenseGrads<S: Scalar = f32> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    /// Weights drawn from `N(0, 1/fan_in)`, bias zero.
    pub fn new(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            weights: Tensor::randn(&[output, input], rng, 0.0, scale).expect("valid shape"),
            bias: Tensor::zeros(&[output]).expect("valid shape"),
        }
    }

    /// All-zero weights and bias. Used for the scalar output head so a
    /// freshly built model scores exactly sigmoid(0) = 0.5.
    pub fn zeroed(input: usize, output: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[output, input]).expect("valid shape"),
            bias: Tensor::zeros(&[output]).expect("valid shape"),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Forward pass for `x: [batch, in]`.
    pub fn forward(&self, x: &Tensor<S>, parallel: bool) -> Result<Tensor<S>> {
        let (input, output) = (self.input_size(), self.output_size());
        if x.rank() != 2 || x.shape()[1] != input {
            return Err(Error::Shape(format!(
                "dense expects [batch, {input}], got {:?}",
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut out = vec![S::ZERO; batch * output];
        for row in out.chunks_exact_mut(output) {
            row.copy_from_slice(self.bias.data());
        }
        addmm_nt(
            &mut out,
            x.data(),
            self.weights.data(),
            batch,
            input,
            output,
            parallel,
        );
        Tensor::from_vec(&[batch, output], out)
    }

    /// Backward pass; `x` is the cached forward input.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        upstream: &Tensor<S>,
        parallel: bool,
    ) -> Result<(Tensor<S>, DenseGrads<S>)> {
        let (input, output) = (self.input_size(), self.output_size());
        let batch = x.shape()[0];
        if upstream.shape() != [batch, output] {
            return Err(Error::Shape(format!(
                "dense upstream must be [{batch}, {output}], got {:?}",
                upstream.shape()
            )));
        }
        let mut dx = vec![S::ZERO; batch * input];
        addmm_nn(
            &mut dx,
            upstream.data(),
            self.weights.data(),
            batch,
            output,
            input,
            parallel,
        );
        let mut dw = vec![S::ZERO; output * input];
        acc_outer_t(
            &mut dw,
            upstream.data(),
            x.data(),
            batch,
            output,
            input,
            parallel,
        );
        let mut db = vec![S::ZERO; output];
        for row in upstream.data().chunks_exact(output) {
            for (slot, &g) in db.iter_mut().zip(row) {
                *slot += g;
            }
        }
        Ok((
            Tensor::from_vec(&[batch, input], dx)?,
            DenseGrads {
                weights: Tensor::from_vec(&[output, input], dw)?,
                bias: Tensor::from_vec(&[output], db)?,
            },
        ))
    }
}
