//! ReLU and sigmoid activations.

use crate::tensor::{Scalar, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::ZERO { v } else { S::ZERO })
}

/// ReLU gradient. The subgradient at 0 is taken as 0, so the mask can be
/// recovered from the forward output alone.
pub fn relu_backward<S: Scalar>(output: &Tensor<S>, upstream: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(output.shape(), upstream.shape());
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > S::ZERO { g } else { S::ZERO })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("matching shapes")
}

#[inline]
fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    // Split on sign so exp never overflows, then pin the saturated tails
    // just inside the open interval (0, 1).
    let y = if v >= S::ZERO {
        S::ONE / (S::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::ONE + e)
    };
    if y >= S::ONE {
        S::BELOW_ONE
    } else if y <= S::ZERO {
        S::MIN_POS
    } else {
        y
    }
}

/// Elementwise logistic function `1 / (1 + e^-x)`.
pub fn sigmoid_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_scalar)
}

/// Sigmoid gradient from the forward output: `y * (1 - y) * upstream`.
pub fn sigmoid_backward<S: Scalar>(output: &Tensor<S>, upstream: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(output.shape(), upstream.shape());
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| y * (S::ONE - y) * g)
        .collect();
    Tensor::from_vec(output.shape(), data).expect("matching shapes")
}
