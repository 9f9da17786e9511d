//! Inverted dropout.
//!
//! Train mode zeroes each element with probability `p` and scales survivors
//! by `1/(1-p)`, so inference is a pure pass-through. The mask is returned
//! as a tensor of factors (0 or the survivor scale) and reused verbatim by
//! the backward pass.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Training-mode dropout. Consumes exactly one uniform draw per element in
/// row-major order. Returns `(output, mask)`.
pub fn dropout_forward_train<S: Scalar>(
    input: &Tensor<S>,
    p: f64,
    rng: &mut SeededRng,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} not in [0,1)")));
    }
    let scale = S::from_f64(1.0 / (1.0 - p));
    let mask_data: Vec<S> = (0..input.len())
        .map(|_| if rng.next_f64() < p { S::ZERO } else { scale })
        .collect();
    let mask = Tensor::from_vec(input.shape(), mask_data)?;
    let out = input.mul(&mask)?;
    Ok((out, mask))
}

/// Inference-mode dropout is the identity and consumes no randomness.
pub fn dropout_forward_infer<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.clone()
}

/// Backward pass: gradient flows only through survivors, with the same
/// scale applied on the way down.
pub fn dropout_backward<S: Scalar>(upstream: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    upstream.mul(mask)
}
