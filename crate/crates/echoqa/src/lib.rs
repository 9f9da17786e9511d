//! Blind quality assessment for echocardiogram-like image sequences.
//!
//! The crate bundles everything needed to train and run a four-stream
//! CNN+LSTM regressor that scores short grayscale clips on four quality
//! attributes (anatomical visibility, cavity clarity, depth-gain,
//! foreshortening), each normalized to `[0, 1]`:
//!
//! - [`tensor`] / [`rng`] — dense arrays and deterministic randomness
//! - [`nn`] — differentiable layer primitives (conv, batch norm, pooling,
//!   dropout, dense, LSTM, ReLU, sigmoid) with hand-written backward passes
//! - [`qanet`] — the four-stream model, inference and batched training passes
//! - [`indicators`] — classical quality-indicator formulas (planar rotation,
//!   RMS contrast, depth-band gain profile, perspective projection)
//! - [`synth`] — synthetic clip generator with analytically known scores
//! - [`train`] — MAE loss, augmentation, SGD with momentum and step decay,
//!   5-fold cross validation
//! - [`eval`] — accuracy/error reports and the inference latency benchmark
//! - [`pgm`] / [`manifest`] / [`checkpoint`] / [`report`] — file formats
//!
//! All randomness flows from a single seed; repeating any pipeline stage
//! with the same seed reproduces its outputs byte for byte.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod indicators;
pub mod manifest;
pub mod nn;
pub mod pgm;
pub mod qanet;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use qanet::{Attribute, InputSpec, QaNet, QualityScores, StreamConfig};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
