//! Differentiable layer primitives.
//!
//! Each layer exposes an explicit forward pass (returning the output plus
//! whatever cache its backward pass needs) and a backward pass mapping an
//! upstream gradient to input and parameter gradients. Forward and backward
//! are pure given (parameters, cache), so clips can be evaluated in
//! parallel with per-call caches; parameters are only mutated by the
//! optimizer between batches.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub(crate) mod linalg;
pub mod lstm;
pub mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
pub use batchnorm::{BatchNorm, BatchNormGrads};
pub use conv::{Conv2d, Conv2dGrads};
pub use dense::{Dense, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward_infer, dropout_forward_train};
pub use lstm::{Lstm, LstmCache, LstmGrads};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward};

/// Train/inference switch shared by batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
