//! Shared helpers for the integration tests: a central finite-difference
//! gradient checker, independent of every backward implementation it
//! verifies (it only ever calls forward code).

#![allow(dead_code)]

use echoqa::rng::SeededRng;
use echoqa::tensor::Tensor;

/// Central finite-difference step used throughout the gradient checks.
pub const FD_STEP: f64 = 1e-4;

/// Differences below this are indistinguishable from the O(h^2) truncation
/// noise of the central difference itself and count as agreement.
pub const FD_NOISE_FLOOR: f64 = 1e-7;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < FD_NOISE_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Checks `analytic` against central differences of `loss` with respect to
/// the tensor selected by `param`, at the sampled `indices`. Returns the
/// maximum relative error. `loss` must be a deterministic function of the
/// object's current parameters.
pub fn fd_check_param<T>(
    obj: &mut T,
    param: impl Fn(&mut T) -> &mut Tensor<f64>,
    loss: impl Fn(&mut T) -> f64,
    analytic: &Tensor<f64>,
    indices: &[usize],
) -> f64 {
    fd_check_param_h(obj, param, loss, analytic, indices, FD_STEP)
}

/// [`fd_check_param`] with an explicit step size.
pub fn fd_check_param_h<T>(
    obj: &mut T,
    param: impl Fn(&mut T) -> &mut Tensor<f64>,
    loss: impl Fn(&mut T) -> f64,
    analytic: &Tensor<f64>,
    indices: &[usize],
    h: f64,
) -> f64 {
    let mut max_rel = 0.0f64;
    for &i in indices {
        let original = param(obj).data()[i];
        param(obj).data_mut()[i] = original + h;
        let plus = loss(obj);
        param(obj).data_mut()[i] = original - h;
        let minus = loss(obj);
        param(obj).data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        max_rel = max_rel.max(rel_error(analytic.data()[i], numeric));
    }
    max_rel
}

/// Outcome of the composed-stream gradient check.
#[derive(Debug)]
pub struct ComposedCheck {
    pub max_rel: f64,
    /// Coordinates compared against finite differences.
    pub checked: usize,
    /// Coordinates skipped because the FD interval crossed a ReLU sign or
    /// pool argmax boundary (the estimator is undefined there).
    pub excluded: usize,
    /// Parameter tensor holding the worst coordinate.
    pub worst: String,
}

/// How the composed check picks coordinates.
#[derive(Debug, Clone, Copy)]
pub enum SamplePlan {
    /// Uniformly over all parameters of the stream.
    Uniform { count: usize },
    /// A fixed number per parameter tensor (stricter coverage of small
    /// tensors than uniform sampling gives).
    PerTensor { count: usize },
}

/// Finite-difference check of one full stream (64x64 input, T = 2, f64):
/// conv stack, batch norm (training mode), LSTM, dense head, sigmoid.
///
/// The check point keeps the composition differentiable on the FD interval:
/// dropout is disabled and the batch-norm offsets are set so activations
/// sit several sigma from the ReLU threshold. Each sampled coordinate is
/// additionally certified by comparing the active-set fingerprint (ReLU
/// signs, pool argmaxes) at both perturbed points against the base run;
/// coordinates whose interval straddles a kink are excluded and resampled,
/// since the central difference does not estimate the derivative there.
pub fn composed_stream_gradient_check(h: f64, plan: SamplePlan) -> ComposedCheck {
    use echoqa::nn::Dense;
    use echoqa::qanet::{Attribute, InputSpec, QaNet, Stream, StreamConfig};

    let mut rng = SeededRng::new(107);
    let spec = InputSpec::new(2, 64, 64);
    let mut config = StreamConfig::standard(Attribute::Visibility);
    config.dropout_p = 0.0;
    let configs = vec![
        config,
        StreamConfig::standard(Attribute::Clarity),
        StreamConfig::standard(Attribute::DepthGain),
        StreamConfig::standard(Attribute::Foreshortening),
    ];
    let mut model = QaNet::<f64>::build(spec, configs, &mut rng).unwrap();
    let stream = &mut model.streams[0];
    // The head is zero-initialized by design; give it weight so gradients
    // reach every layer below it.
    stream.head = Dense::new(16, 1, &mut rng);
    for bn in stream.conv_bn.iter_mut().chain(stream.dense_bn.iter_mut()) {
        bn.gamma.fill(0.5);
        bn.beta.fill(2.0);
    }
    // The dense stages normalize over just `batch` samples; a near-zero
    // sample variance makes 1/sqrt(var + eps) so sharply curved that the
    // FD truncation error alone exceeds the tolerance. A larger epsilon
    // bounds the curvature without changing what the backward pass must
    // compute.
    for bn in stream.dense_bn.iter_mut() {
        bn.epsilon = 1e-2;
    }

    let batch = 4;
    let frames =
        Tensor::<f64>::randn(&[batch * 2, 1, 64, 64], &mut rng, 0.5, 0.25).unwrap();
    let weights = loss_weights(&[batch, 1], 8);

    struct Ctx {
        stream: Stream<f64>,
        frames: Tensor<f64>,
    }
    let eval = |c: &mut Ctx, w: &Tensor<f64>| {
        let mut drop_rng = SeededRng::new(0);
        let (scores, cache) = c
            .stream
            .forward_train(&c.frames, 4, 2, &mut drop_rng, true)
            .unwrap();
        (weighted_sum(&scores, w), cache.region_fingerprint())
    };

    let mut drop_rng = SeededRng::new(0);
    let (_, cache) = stream
        .forward_train(&frames, batch, 2, &mut drop_rng, true)
        .unwrap();
    let base_fp = cache.region_fingerprint();
    let grads = stream.backward_train(&cache, &weights, true).unwrap();

    let mut ctx = Ctx {
        stream: stream.clone(),
        frames,
    };
    let names = ctx.stream.trainable_names();
    let lens: Vec<usize> = ctx
        .stream
        .trainable_params()
        .iter()
        .map(|t| t.len())
        .collect();

    // (tensor, index) candidates per the sampling plan, oversampled so that
    // excluded coordinates can be replaced.
    let (candidates, target): (Vec<(usize, usize)>, usize) = match plan {
        SamplePlan::Uniform { count } => {
            let total: usize = lens.iter().sum();
            let picks = (0..count * 3)
                .map(|_| {
                    let mut flat = rng.next_below(total as u64) as usize;
                    for (p, &len) in lens.iter().enumerate() {
                        if flat < len {
                            return (p, flat);
                        }
                        flat -= len;
                    }
                    unreachable!("flat index within total")
                })
                .collect();
            (picks, count)
        }
        SamplePlan::PerTensor { count } => {
            let mut picks = Vec::new();
            for (p, &len) in lens.iter().enumerate() {
                for i in sample_indices(len, count * 3, &mut rng) {
                    picks.push((p, i));
                }
            }
            (picks, count * lens.len())
        }
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut excluded = 0usize;
    let mut per_tensor_valid = vec![0usize; lens.len()];
    let mut worst = String::new();
    for (p, i) in candidates {
        if checked == target {
            break;
        }
        if let SamplePlan::PerTensor { count } = plan {
            if per_tensor_valid[p] == count {
                continue;
            }
        }
        let original = ctx.stream.trainable_params()[p].data()[i];
        ctx.stream.trainable_params().swap_remove(p).data_mut()[i] = original + h;
        let (plus, fp_plus) = eval(&mut ctx, &weights);
        ctx.stream.trainable_params().swap_remove(p).data_mut()[i] = original - h;
        let (minus, fp_minus) = eval(&mut ctx, &weights);
        ctx.stream.trainable_params().swap_remove(p).data_mut()[i] = original;
        if fp_plus != base_fp || fp_minus != base_fp {
            excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = rel_error(grads[p].data()[i], numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = format!(
                "{} [{i}]: analytic {:.6e} numeric {numeric:.6e}",
                names[p],
                grads[p].data()[i]
            );
        }
        checked += 1;
        per_tensor_valid[p] += 1;
    }
    ComposedCheck {
        max_rel,
        checked,
        excluded,
        worst,
    }
}

/// Deterministically samples up to `count` distinct indices from `0..len`.
pub fn sample_indices(len: usize, count: usize, rng: &mut SeededRng) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(count);
    all.sort_unstable();
    all
}

/// Fixed random linear functional turning a tensor-valued forward pass into
/// a scalar loss: `sum_i w_i * out_i`.
pub fn loss_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut SeededRng::new(seed), 0.0, 1.0).expect("valid shape")
}

pub fn weighted_sum(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data()
        .iter()
        .zip(weights.data())
        .map(|(&a, &b)| a * b)
        .sum()
}
