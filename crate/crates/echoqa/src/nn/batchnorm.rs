//! Batch normalization over the channel axis.
//!
//! Accepts `[batch, channels]` or `[batch, channels, h, w]`; statistics are
//! taken over every axis except channels. Training mode normalizes by batch
//! statistics (biased variance) and folds them into the running estimates
//! with momentum 0.1 (running variance uses the unbiased estimate);
//! inference mode is a pure function of the input and the stored running
//! statistics.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm<S: Scalar = f32> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug)]
pub struct BatchNormGrads<S: Scalar = f32> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

/// Forward cache: normalized activations plus per-channel scale.
#[derive(Debug)]
pub struct BatchNormCache<S: Scalar = f32> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
}

struct Layout {
    channels: usize,
    /// contiguous elements per channel entry (h*w, or 1 for 2-d input)
    inner: usize,
    /// number of (batch, spatial) samples per channel
    per_channel: usize,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], S::ONE).expect("valid shape"),
            beta: Tensor::zeros(&[channels]).expect("valid shape"),
            running_mean: Tensor::zeros(&[channels]).expect("valid shape"),
            running_var: Tensor::filled(&[channels], S::ONE).expect("valid shape"),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor<S>) -> Result<Layout> {
        let channels = self.channels();
        let ok = match x.rank() {
            2 => x.shape()[1] == channels,
            4 => x.shape()[1] == channels,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "batchnorm over {channels} channels cannot take input {:?}",
                x.shape()
            )));
        }
        let inner = if x.rank() == 4 {
            x.shape()[2] * x.shape()[3]
        } else {
            1
        };
        Ok(Layout {
            channels,
            inner,
            per_channel: x.shape()[0] * inner,
        })
    }

    fn channel_entries<'a>(
        data: &'a [S],
        layout: &Layout,
        c: usize,
    ) -> impl Iterator<Item = usize> + 'a {
        let Layout {
            channels, inner, ..
        } = *layout;
        let batch = data.len() / (channels * inner);
        (0..batch).flat_map(move |b| {
            let base = (b * channels + c) * inner;
            base..base + inner
        })
    }

    /// Training-mode forward. Requires batch size >= 2. Updates running
    /// statistics in place.
    pub fn forward_train(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, BatchNormCache<S>)> {
        let layout = self.layout(x)?;
        if x.shape()[0] < 2 {
            return Err(Error::Shape(
                "batchnorm training requires batch size >= 2".into(),
            ));
        }
        let n = layout.per_channel as f64;
        let data = x.data();
        let mut out = vec![S::ZERO; data.len()];
        let mut xhat = vec![S::ZERO; data.len()];
        let mut inv_std = vec![S::ZERO; layout.channels];
        for c in 0..layout.channels {
            let mut sum = 0.0;
            for i in Self::channel_entries(data, &layout, c) {
                sum += data[i].to_f64();
            }
            let mean = sum / n;
            let mut sq = 0.0;
            for i in Self::channel_entries(data, &layout, c) {
                let d = data[i].to_f64() - mean;
                sq += d * d;
            }
            let var = sq / n;
            let istd = 1.0 / (var + self.epsilon).sqrt();
            inv_std[c] = S::from_f64(istd);
            let (g, b) = (self.gamma.data()[c], self.beta.data()[c]);
            let mean_s = S::from_f64(mean);
            let istd_s = S::from_f64(istd);
            for i in Self::channel_entries(data, &layout, c) {
                let xh = (data[i] - mean_s) * istd_s;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
            let unbiased = if n > 1.0 { sq / (n - 1.0) } else { var };
            let rm = self.running_mean.data_mut();
            rm[c] = S::from_f64(rm[c].to_f64() * (1.0 - self.momentum) + mean * self.momentum);
            let rv = self.running_var.data_mut();
            rv[c] = S::from_f64(rv[c].to_f64() * (1.0 - self.momentum) + unbiased * self.momentum);
        }
        Ok((
            Tensor::from_vec(x.shape(), out)?,
            BatchNormCache {
                xhat: Tensor::from_vec(x.shape(), xhat)?,
                inv_std,
            },
        ))
    }

    /// Inference-mode forward using running statistics. Pure.
    pub fn forward_infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let layout = self.layout(x)?;
        let data = x.data();
        let mut out = vec![S::ZERO; data.len()];
        for c in 0..layout.channels {
            let mean = self.running_mean.data()[c];
            let var = self.running_var.data()[c].to_f64();
            let istd = S::from_f64(1.0 / (var + self.epsilon).sqrt());
            let (g, b) = (self.gamma.data()[c], self.beta.data()[c]);
            for i in Self::channel_entries(data, &layout, c) {
                out[i] = g * ((data[i] - mean) * istd) + b;
            }
        }
        Tensor::from_vec(x.shape(), out)
    }

    /// Backward pass for training-mode forward.
    pub fn backward(
        &self,
        cache: &BatchNormCache<S>,
        upstream: &Tensor<S>,
    ) -> Result<(Tensor<S>, BatchNormGrads<S>)> {
        let layout = self.layout(upstream)?;
        if upstream.shape() != cache.xhat.shape() {
            return Err(Error::Shape(
                "batchnorm backward: upstream does not match cached shape".into(),
            ));
        }
        let n = layout.per_channel as f64;
        let up = upstream.data();
        let xhat = cache.xhat.data();
        let mut dx = vec![S::ZERO; up.len()];
        let mut dgamma = vec![S::ZERO; layout.channels];
        let mut dbeta = vec![S::ZERO; layout.channels];
        for c in 0..layout.channels {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in Self::channel_entries(up, &layout, c) {
                let dy = up[i].to_f64();
                sum_dy += dy;
                sum_dy_xhat += dy * xhat[i].to_f64();
            }
            dgamma[c] = S::from_f64(sum_dy_xhat);
            dbeta[c] = S::from_f64(sum_dy);
            let g = self.gamma.data()[c].to_f64();
            let istd = cache.inv_std[c].to_f64();
            let k = g * istd / n;
            for i in Self::channel_entries(up, &layout, c) {
                let dy = up[i].to_f64();
                let v = k * (n * dy - sum_dy - xhat[i].to_f64() * sum_dy_xhat);
                dx[i] = S::from_f64(v);
            }
        }
        Ok((
            Tensor::from_vec(upstream.shape(), dx)?,
            BatchNormGrads {
                gamma: Tensor::from_vec(&[layout.channels], dgamma)?,
                beta: Tensor::from_vec(&[layout.channels], dbeta)?,
            },
        ))
    }
}
