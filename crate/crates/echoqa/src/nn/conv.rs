//! 2-d convolution (cross-correlation) with valid padding.
//!
//! Every output element is `bias[oc] + sum over (ic, kh, kw)` of
//! `kernel * input`, accumulated in exactly that order. The row kernels
//! below only restructure the loops around contiguous slices; each output
//! element still receives its additions in the canonical order, so results
//! are bit-identical to the naive six-nested-loop form.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar = f32> {
    /// `[out_channels, in_channels, kh, kw]`
    pub kernels: Tensor<S>,
    /// `[out_channels]`
    pub bias: Tensor<S>,
    pub stride: usize,
}

#[derive(Debug)]
pub struct Conv2dGrads<S: Scalar = f32> {
    pub kernels: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Conv2d<S> {
    /// Kernels drawn from `N(0, 1/fan_in)` with `fan_in = in_c * kh * kw`,
    /// bias zero.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        Self {
            kernels: Tensor::randn(
                &[out_channels, in_channels, kernel, kernel],
                rng,
                0.0,
                1.0 / fan_in.sqrt(),
            )
            .expect("valid shape"),
            bias: Tensor::zeros(&[out_channels]).expect("valid shape"),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// Valid-padding output size for one spatial dimension.
    pub fn out_extent(&self, input: usize) -> Result<usize> {
        let k = self.kernel_size();
        if input < k {
            return Err(Error::Shape(format!(
                "input extent {input} smaller than kernel {k}"
            )));
        }
        Ok((input - k) / self.stride + 1)
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<(usize, usize, usize, usize, usize)> {
        if input.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects [batch, c, h, w], got {:?}",
                input.shape()
            )));
        }
        let (batch, c, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let oh = self.out_extent(h)?;
        let ow = self.out_extent(w)?;
        Ok((batch, c, h, oh, ow))
    }

    /// Forward pass for `input: [batch, in_c, h, w]`.
    pub fn forward(&self, input: &Tensor<S>, parallel: bool) -> Result<Tensor<S>> {
        let (batch, in_c, h, oh, ow) = self.check_input(input)?;
        let w = input.shape()[3];
        let (oc, k, stride) = (self.out_channels(), self.kernel_size(), self.stride);
        let in_plane = h * w;
        let out_plane = oh * ow;
        let kernels = self.kernels.data();
        let bias = self.bias.data();
        let in_data = input.data();

        let mut out = vec![S::ZERO; batch * oc * out_plane];
        let body = |(plane_idx, out_plane_data): (usize, &mut [S])| {
            let b = plane_idx / oc;
            let o = plane_idx % oc;
            out_plane_data.fill(bias[o]);
            let in_image = &in_data[b * in_c * in_plane..(b + 1) * in_c * in_plane];
            for ic in 0..in_c {
                let channel = &in_image[ic * in_plane..(ic + 1) * in_plane];
                let kbase = (o * in_c + ic) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let weight = kernels[kbase + kh * k + kw];
                        if stride == 1 {
                            for row in 0..oh {
                                let src = &channel[(row + kh) * w + kw..(row + kh) * w + kw + ow];
                                let dst = &mut out_plane_data[row * ow..(row + 1) * ow];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += weight * s;
                                }
                            }
                        } else {
                            for row in 0..oh {
                                let src_row = (row * stride + kh) * w + kw;
                                let dst = &mut out_plane_data[row * ow..(row + 1) * ow];
                                for (col, d) in dst.iter_mut().enumerate() {
                                    *d += weight * channel[src_row + col * stride];
                                }
                            }
                        }
                    }
                }
            }
        };
        if parallel {
            out.par_chunks_mut(out_plane).enumerate().for_each(body);
        } else {
            out.chunks_mut(out_plane).enumerate().for_each(body);
        }
        Tensor::from_vec(&[batch, oc, oh, ow], out)
    }

    /// Backward pass; `input` is the cached forward input.
    pub fn backward(
        &self,
        input: &Tensor<S>,
        upstream: &Tensor<S>,
        parallel: bool,
    ) -> Result<(Tensor<S>, Conv2dGrads<S>)> {
        let (batch, in_c, h, oh, ow) = self.check_input(input)?;
        let w = input.shape()[3];
        let (oc, k, stride) = (self.out_channels(), self.kernel_size(), self.stride);
        if upstream.shape() != [batch, oc, oh, ow] {
            return Err(Error::Shape(format!(
                "conv2d upstream must be [{batch}, {oc}, {oh}, {ow}], got {:?}",
                upstream.shape()
            )));
        }
        let in_plane = h * w;
        let out_plane = oh * ow;
        let kernels = self.kernels.data();
        let in_data = input.data();
        let up_data = upstream.data();

        // Input gradient: scatter each upstream plane back through the kernel.
        let mut dinput = vec![S::ZERO; in_data.len()];
        let din_body = |(b, dim): (usize, &mut [S])| {
            for o in 0..oc {
                let up_plane = &up_data[(b * oc + o) * out_plane..(b * oc + o + 1) * out_plane];
                for ic in 0..in_c {
                    let dchan = &mut dim[ic * in_plane..(ic + 1) * in_plane];
                    let kbase = (o * in_c + ic) * k * k;
                    for kh in 0..k {
                        for kw in 0..k {
                            let weight = kernels[kbase + kh * k + kw];
                            for row in 0..oh {
                                let up_row = &up_plane[row * ow..(row + 1) * ow];
                                if stride == 1 {
                                    let dst =
                                        &mut dchan[(row + kh) * w + kw..(row + kh) * w + kw + ow];
                                    for (d, &g) in dst.iter_mut().zip(up_row) {
                                        *d = weight.mul_add(g, *d);
                                    }
                                } else {
                                    let base = (row * stride + kh) * w + kw;
                                    for (col, &g) in up_row.iter().enumerate() {
                                        dchan[base + col * stride] =
                                            weight.mul_add(g, dchan[base + col * stride]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if parallel {
            dinput
                .par_chunks_mut(in_c * in_plane)
                .enumerate()
                .for_each(din_body);
        } else {
            dinput
                .chunks_mut(in_c * in_plane)
                .enumerate()
                .for_each(din_body);
        }

        // Kernel and bias gradients, one output channel per task.
        let mut dkernels = vec![S::ZERO; kernels.len()];
        let mut dbias = vec![S::ZERO; oc];
        let kslice = in_c * k * k;
        let dk_body = |(o, (dk_chan, db_slot)): (usize, (&mut [S], &mut S))| {
            for b in 0..batch {
                let up_plane = &up_data[(b * oc + o) * out_plane..(b * oc + o + 1) * out_plane];
                for &g in up_plane {
                    *db_slot += g;
                }
                let in_image = &in_data[b * in_c * in_plane..(b + 1) * in_c * in_plane];
                for ic in 0..in_c {
                    let channel = &in_image[ic * in_plane..(ic + 1) * in_plane];
                    for kh in 0..k {
                        for kw in 0..k {
                            let mut acc = S::ZERO;
                            for row in 0..oh {
                                let up_row = &up_plane[row * ow..(row + 1) * ow];
                                if stride == 1 {
                                    let src =
                                        &channel[(row + kh) * w + kw..(row + kh) * w + kw + ow];
                                    acc = acc + crate::nn::linalg::dot(up_row, src);
                                } else {
                                    let base = (row * stride + kh) * w + kw;
                                    for (col, &g) in up_row.iter().enumerate() {
                                        acc = g.mul_add(channel[base + col * stride], acc);
                                    }
                                }
                            }
                            dk_chan[ic * k * k + kh * k + kw] += acc;
                        }
                    }
                }
            }
        };
        if parallel {
            dkernels
                .par_chunks_mut(kslice)
                .zip(dbias.par_iter_mut())
                .enumerate()
                .for_each(dk_body);
        } else {
            dkernels
                .chunks_mut(kslice)
                .zip(dbias.iter_mut())
                .enumerate()
                .for_each(dk_body);
        }

        Ok((
            Tensor::from_vec(input.shape(), dinput)?,
            Conv2dGrads {
                kernels: Tensor::from_vec(self.kernels.shape(), dkernels)?,
                bias: Tensor::from_vec(&[oc], dbias)?,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal six-nested-loop convolution with the canonical summation
    /// order. Kept separate from the implementation on purpose.
    pub(crate) fn conv2d_oracle<S: Scalar>(layer: &Conv2d<S>, input: &Tensor<S>) -> Tensor<S> {
        let (batch, in_c, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let (oc, k, stride) = (layer.out_channels(), layer.kernel_size(), layer.stride);
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut out = Tensor::<S>::zeros(&[batch, oc, oh, ow]).unwrap();
        for b in 0..batch {
            for o in 0..oc {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = layer.bias.at(&[o]);
                        for ic in 0..in_c {
                            for kh in 0..k {
                                for kw in 0..k {
                                    acc = acc
                                        + layer.kernels.at(&[o, ic, kh, kw])
                                            * input.at(&[b, ic, y * stride + kh, x * stride + kw]);
                                }
                            }
                        }
                        out.set(&[b, o, y, x], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut layer = Conv2d::<f32>::new(1, 1, 3, 1, &mut SeededRng::new(0));
        layer.kernels.fill(1.0);
        layer.bias.fill(0.0);
        let input = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0).unwrap();
        let out = layer.forward(&input, false).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn delta_kernel_crops_center() {
        let mut layer = Conv2d::<f32>::new(1, 1, 3, 1, &mut SeededRng::new(0));
        layer.kernels.fill(0.0);
        layer.kernels.set(&[0, 0, 1, 1], 1.0);
        layer.bias.fill(0.0);
        let input = Tensor::<f32>::randn(&[1, 1, 6, 7], &mut SeededRng::new(1), 0.0, 1.0).unwrap();
        let out = layer.forward(&input, false).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 5]);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.at(&[0, 0, y, x]), input.at(&[0, 0, y + 1, x + 1]));
            }
        }
    }

    #[test]
    fn matches_oracle_bitwise_f32() {
        let mut rng = SeededRng::new(42);
        for case in 0..8 {
            let layer = Conv2d::<f32>::new(2, 4, 3, 1, &mut rng);
            let input =
                Tensor::<f32>::randn(&[1, 2, 8, 8], &mut rng, 0.0, 1.0).unwrap();
            let fast = layer.forward(&input, case % 2 == 0).unwrap();
            let slow = conv2d_oracle(&layer, &input);
            assert_eq!(fast, slow, "case {case} diverged from the oracle");
        }
    }

    #[test]
    fn stride_two_matches_oracle() {
        let mut rng = SeededRng::new(7);
        let layer = Conv2d::<f32>::new(3, 2, 3, 2, &mut rng);
        let input = Tensor::<f32>::randn(&[2, 3, 9, 11], &mut rng, 0.0, 1.0).unwrap();
        assert_eq!(
            layer.forward(&input, false).unwrap(),
            conv2d_oracle(&layer, &input)
        );
    }

    #[test]
    fn rejects_small_input_and_channel_mismatch() {
        let mut rng = SeededRng::new(7);
        let layer = Conv2d::<f32>::new(2, 4, 3, 1, &mut rng);
        assert!(layer
            .forward(&Tensor::zeros(&[1, 2, 2, 8]).unwrap(), false)
            .is_err());
        assert!(layer
            .forward(&Tensor::zeros(&[1, 3, 8, 8]).unwrap(), false)
            .is_err());
    }

    #[test]
    fn parallel_and_sequential_backward_agree() {
        let mut rng = SeededRng::new(11);
        let layer = Conv2d::<f32>::new(2, 3, 3, 1, &mut rng);
        let input = Tensor::<f32>::randn(&[2, 2, 10, 10], &mut rng, 0.0, 1.0).unwrap();
        let up = Tensor::<f32>::randn(&[2, 3, 8, 8], &mut rng, 0.0, 1.0).unwrap();
        let (dx1, g1) = layer.backward(&input, &up, false).unwrap();
        let (dx2, g2) = layer.backward(&input, &up, true).unwrap();
        assert_eq!(dx1, dx2);
        assert_eq!(g1.kernels, g2.kernels);
        assert_eq!(g1.bias, g2.bias);
    }
}
