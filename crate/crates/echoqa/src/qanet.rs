//! The four-stream quality regression model.
//!
//! Each stream owns a conv stack, an LSTM temporal module, and a dense head,
//! and predicts one attribute score in (0, 1). Streams share no parameters.
//! Per conv layer the order is conv -> batch norm -> ReLU -> (max pool when
//! the plan says so) -> dropout; the dense head runs two stages of
//! dense -> batch norm -> ReLU -> dropout and finishes with a zero-initialized
//! 1-unit layer under a sigmoid, so a freshly built model scores exactly 0.5.
//!
//! For a clip of `T` frames the conv stack runs per frame, each frame's
//! features are flattened, the `T`-step sequence feeds the LSTM, and the
//! final hidden state drives the dense head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormCache;
use crate::nn::{
    dropout_backward, dropout_forward_train, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, BatchNorm, Conv2d, Dense,
    Lstm, LstmCache,
};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// The four quality attributes, in fixed output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Visibility,
    Clarity,
    DepthGain,
    Foreshortening,
}

pub const ATTRIBUTES: [Attribute; 4] = [
    Attribute::Visibility,
    Attribute::Clarity,
    Attribute::DepthGain,
    Attribute::Foreshortening,
];

impl Attribute {
    pub fn index(self) -> usize {
        match self {
            Attribute::Visibility => 0,
            Attribute::Clarity => 1,
            Attribute::DepthGain => 2,
            Attribute::Foreshortening => 3,
        }
    }

    /// Short report label (VS, LC, DG, FS).
    pub fn label(self) -> &'static str {
        match self {
            Attribute::Visibility => "VS",
            Attribute::Clarity => "LC",
            Attribute::DepthGain => "DG",
            Attribute::Foreshortening => "FS",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Visibility => "visibility",
            Attribute::Clarity => "clarity",
            Attribute::DepthGain => "depth_gain",
            Attribute::Foreshortening => "foreshortening",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ATTRIBUTES.iter().copied().find(|a| a.name() == name)
    }
}

/// Shape of the clips a model accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputSpec {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels: 1,
        }
    }
}

/// Architecture of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub attribute: Attribute,
    /// Output channels per conv layer.
    pub conv_channels: Vec<usize>,
    /// Whether a 2x2 max pool follows each conv layer.
    pub pool_plan: Vec<bool>,
    pub lstm_hidden: usize,
    /// Widths of the dense stages.
    pub dense_plan: Vec<usize>,
    pub dropout_p: f64,
}

pub const CONV_KERNEL: usize = 3;

impl StreamConfig {
    /// The standard plan: four conv layers of 32, 32, 32, 64 channels with
    /// pooling after layers 1, 2 and 4, except the clarity stream which has
    /// three conv layers of 32, 32, 64 channels with pooling after layers
    /// 1 and 3.
    pub fn standard(attribute: Attribute) -> Self {
        let (conv_channels, pool_plan) = if attribute == Attribute::Clarity {
            (vec![32, 32, 64], vec![true, false, true])
        } else {
            (vec![32, 32, 32, 64], vec![true, true, false, true])
        };
        Self {
            attribute,
            conv_channels,
            pool_plan,
            lstm_hidden: 32,
            dense_plan: vec![64, 16],
            dropout_p: 0.5,
        }
    }

    pub fn standard_set() -> Vec<StreamConfig> {
        ATTRIBUTES.iter().map(|&a| Self::standard(a)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::Config("stream needs at least one conv layer".into()));
        }
        if self.pool_plan.len() != self.conv_channels.len() {
            return Err(Error::Config(
                "pool_plan must have one entry per conv layer".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} not in [0,1)",
                self.dropout_p
            )));
        }
        if self.lstm_hidden == 0 || self.dense_plan.iter().any(|&w| w == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        Ok(())
    }

    /// Spatial size after each conv (and pool, where planned), given the
    /// valid-padding 3x3 conv and floor-halving pool rules. Returns the
    /// stage list and the flatten size (`channels * h * w` after the last
    /// stage).
    pub fn size_chain(&self, height: usize, width: usize) -> Result<(Vec<(usize, usize)>, usize)> {
        self.validate()?;
        let mut h = height;
        let mut w = width;
        let mut chain = Vec::new();
        for (i, &pool) in self.pool_plan.iter().enumerate() {
            if h < CONV_KERNEL || w < CONV_KERNEL {
                return Err(Error::Config(format!(
                    "spatial size {h}x{w} too small for conv layer {i} of {} ({}x{} input)",
                    self.attribute.name(),
                    height,
                    width
                )));
            }
            h -= CONV_KERNEL - 1;
            w -= CONV_KERNEL - 1;
            chain.push((h, w));
            if pool {
                if h < 2 || w < 2 {
                    return Err(Error::Config(format!(
                        "spatial size {h}x{w} too small to pool after conv layer {i} of {}",
                        self.attribute.name()
                    )));
                }
                h /= 2;
                w /= 2;
                chain.push((h, w));
            }
        }
        let flatten = self.conv_channels.last().unwrap() * h * w;
        Ok((chain, flatten))
    }
}

/// The four attribute scores plus their aggregate, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub visibility: f64,
    pub clarity: f64,
    pub depth_gain: f64,
    pub foreshortening: f64,
    pub aggregate: f64,
}

impl QualityScores {
    pub fn from_array(scores: [f64; 4], weights: &[f64; 4]) -> Self {
        let total: f64 = weights.iter().sum();
        let aggregate = scores.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>() / total;
        Self {
            visibility: scores[0],
            clarity: scores[1],
            depth_gain: scores[2],
            foreshortening: scores[3],
            aggregate,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.visibility,
            self.clarity,
            self.depth_gain,
            self.foreshortening,
        ]
    }
}

/// One attribute stream: conv stack, LSTM, dense head.
#[derive(Debug, Clone)]
pub struct Stream<S: Scalar = f32> {
    pub config: StreamConfig,
    pub conv: Vec<Conv2d<S>>,
    pub conv_bn: Vec<BatchNorm<S>>,
    pub lstm: Lstm<S>,
    pub dense: Vec<Dense<S>>,
    pub dense_bn: Vec<BatchNorm<S>>,
    pub head: Dense<S>,
    pub flatten_size: usize,
    pub size_chain: Vec<(usize, usize)>,
}

impl<S: Scalar> Stream<S> {
    fn build(config: StreamConfig, spec: &InputSpec, rng: &mut SeededRng) -> Result<Self> {
        let (size_chain, flatten_size) = config.size_chain(spec.height, spec.width)?;
        let mut conv = Vec::new();
        let mut conv_bn = Vec::new();
        let mut in_c = spec.channels;
        for &out_c in &config.conv_channels {
            conv.push(Conv2d::new(in_c, out_c, CONV_KERNEL, 1, rng));
            conv_bn.push(BatchNorm::new(out_c));
            in_c = out_c;
        }
        let lstm = Lstm::new(flatten_size, config.lstm_hidden, rng);
        let mut dense = Vec::new();
        let mut dense_bn = Vec::new();
        let mut width = config.lstm_hidden;
        for &next in &config.dense_plan {
            dense.push(Dense::new(width, next, rng));
            dense_bn.push(BatchNorm::new(next));
            width = next;
        }
        let head = Dense::zeroed(width, 1);
        Ok(Self {
            config,
            conv,
            conv_bn,
            lstm,
            dense,
            dense_bn,
            head,
            flatten_size,
            size_chain,
        })
    }

    /// Inference pass over one clip's frames `[T, C, H, W]`, single
    /// threaded. Batch norm uses running statistics; dropout is skipped.
    pub fn score_clip(&self, clip: &Tensor<S>) -> Result<f64> {
        let frames = clip.shape()[0];
        let mut x = clip.clone();
        for (layer, (bn, &pool)) in self
            .conv
            .iter()
            .zip(self.conv_bn.iter().zip(&self.config.pool_plan))
        {
            x = relu_forward(&bn.forward_infer(&layer.forward(&x, false)?)?);
            if pool {
                x = maxpool2x2_forward(&x)?.0;
            }
        }
        let features = x.reshape(&[frames, self.flatten_size])?;
        let sequence = split_rows(&features);
        let (mut h, _) = self.lstm.forward(sequence, false)?;
        h = h.reshape(&[1, self.config.lstm_hidden])?;
        for (layer, bn) in self.dense.iter().zip(&self.dense_bn) {
            h = relu_forward(&bn.forward_infer(&layer.forward(&h, false)?)?);
        }
        let logit = self.head.forward(&h, false)?;
        Ok(sigmoid_forward(&logit).data()[0].to_f64())
    }

    /// Post-activation (post-ReLU, pre-pool) feature maps of one conv layer
    /// for every frame of the clip, in inference mode.
    pub fn feature_maps(&self, clip: &Tensor<S>, layer_index: usize) -> Result<Tensor<S>> {
        if layer_index >= self.conv.len() {
            return Err(Error::Config(format!(
                "stream {} has {} conv layers, no index {layer_index}",
                self.config.attribute.name(),
                self.conv.len()
            )));
        }
        let mut x = clip.clone();
        for (i, (layer, (bn, &pool))) in self
            .conv
            .iter()
            .zip(self.conv_bn.iter().zip(&self.config.pool_plan))
            .enumerate()
        {
            x = relu_forward(&bn.forward_infer(&layer.forward(&x, false)?)?);
            if i == layer_index {
                return Ok(x);
            }
            if pool {
                x = maxpool2x2_forward(&x)?.0;
            }
        }
        unreachable!("layer_index checked above")
    }
}

/// Splits a `[rows, cols]` tensor into row tensors of shape `[1, cols]`.
fn split_rows<S: Scalar>(t: &Tensor<S>) -> Vec<Tensor<S>> {
    let cols = t.shape()[1];
    t.data()
        .chunks_exact(cols)
        .map(|row| Tensor::from_vec(&[1, cols], row.to_vec()).expect("row shape"))
        .collect()
}

/// The assembled four-stream model.
#[derive(Debug, Clone)]
pub struct QaNet<S: Scalar = f32> {
    pub input_spec: InputSpec,
    pub streams: Vec<Stream<S>>,
    pub aggregate_weights: [f64; 4],
}

impl<S: Scalar> QaNet<S> {
    /// Builds a fully initialized model. Streams are initialized in order
    /// from `rng`, so the same seed yields bitwise identical parameters.
    pub fn build(
        input_spec: InputSpec,
        configs: Vec<StreamConfig>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if configs.len() != 4 {
            return Err(Error::Config(format!(
                "expected 4 stream configs, got {}",
                configs.len()
            )));
        }
        if input_spec.frames == 0 || input_spec.channels != 1 {
            return Err(Error::Config(
                "input spec needs frames >= 1 and 1 channel".into(),
            ));
        }
        for (i, c) in configs.iter().enumerate() {
            if c.attribute.index() != i {
                return Err(Error::Config(
                    "stream configs must be in attribute order (VS, LC, DG, FS)".into(),
                ));
            }
        }
        let streams = configs
            .into_iter()
            .map(|c| Stream::build(c, &input_spec, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_spec,
            streams,
            aggregate_weights: [0.25; 4],
        })
    }

    /// Standard model for the given input shape.
    pub fn standard(input_spec: InputSpec, rng: &mut SeededRng) -> Result<Self> {
        Self::build(input_spec, StreamConfig::standard_set(), rng)
    }

    pub fn check_clip(&self, clip: &Tensor<S>) -> Result<()> {
        let spec = &self.input_spec;
        let want = [spec.frames, spec.channels, spec.height, spec.width];
        if clip.shape() != want {
            return Err(Error::Shape(format!(
                "clip shape {:?} does not match model input {want:?}",
                clip.shape()
            )));
        }
        Ok(())
    }

    /// Scores one clip. With `parallel_streams` the four streams run as
    /// separate tasks (each internally single threaded); the result is
    /// identical either way.
    pub fn forward_clip_with(
        &self,
        clip: &Tensor<S>,
        parallel_streams: bool,
    ) -> Result<QualityScores> {
        self.check_clip(clip)?;
        let scores: Result<Vec<f64>> = if parallel_streams {
            self.streams
                .par_iter()
                .map(|s| s.score_clip(clip))
                .collect()
        } else {
            self.streams.iter().map(|s| s.score_clip(clip)).collect()
        };
        let scores = scores?;
        Ok(QualityScores::from_array(
            [scores[0], scores[1], scores[2], scores[3]],
            &self.aggregate_weights,
        ))
    }

    /// Scores one clip with parallel streams.
    pub fn forward_clip(&self, clip: &Tensor<S>) -> Result<QualityScores> {
        self.forward_clip_with(clip, true)
    }

    /// Scores a batch of uniformly shaped clips; equal to mapping
    /// [`QaNet::forward_clip`] in order.
    pub fn forward_batch(&self, clips: &[Tensor<S>]) -> Result<Vec<QualityScores>> {
        clips
            .par_iter()
            .map(|c| self.forward_clip_with(c, false))
            .collect()
    }

    /// Post-activation feature maps for inspection or export.
    pub fn dump_feature_maps(
        &self,
        clip: &Tensor<S>,
        attribute: Attribute,
        layer_index: usize,
    ) -> Result<Tensor<S>> {
        self.check_clip(clip)?;
        self.streams[attribute.index()].feature_maps(clip, layer_index)
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&mut self) -> usize {
        self.streams
            .iter_mut()
            .map(|s| s.trainable_params().iter().map(|t| t.len()).sum::<usize>())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Parameter enumeration (shared by the optimizer and the checkpoint format)
// ---------------------------------------------------------------------------

impl<S: Scalar> Stream<S> {
    /// Trainable parameters in canonical order. The order is the contract
    /// for gradients, optimizer state and checkpoints.
    pub fn trainable_params(&mut self) -> Vec<&mut Tensor<S>> {
        let mut params: Vec<&mut Tensor<S>> = Vec::new();
        for (conv, bn) in self.conv.iter_mut().zip(self.conv_bn.iter_mut()) {
            params.push(&mut conv.kernels);
            params.push(&mut conv.bias);
            params.push(&mut bn.gamma);
            params.push(&mut bn.beta);
        }
        params.extend(self.lstm.w.iter_mut());
        params.extend(self.lstm.u.iter_mut());
        params.extend(self.lstm.b.iter_mut());
        for (dense, bn) in self.dense.iter_mut().zip(self.dense_bn.iter_mut()) {
            params.push(&mut dense.weights);
            params.push(&mut dense.bias);
            params.push(&mut bn.gamma);
            params.push(&mut bn.beta);
        }
        params.push(&mut self.head.weights);
        params.push(&mut self.head.bias);
        params
    }

    /// Names matching [`Stream::trainable_params`] order.
    pub fn trainable_names(&self) -> Vec<String> {
        let attr = self.config.attribute.name();
        let mut names = Vec::new();
        for i in 0..self.conv.len() {
            names.push(format!("{attr}.conv{i}.kernels"));
            names.push(format!("{attr}.conv{i}.bias"));
            names.push(format!("{attr}.conv_bn{i}.gamma"));
            names.push(format!("{attr}.conv_bn{i}.beta"));
        }
        for part in ["w", "u", "b"] {
            for gate in ["i", "f", "g", "o"] {
                names.push(format!("{attr}.lstm.{part}{gate}"));
            }
        }
        for i in 0..self.dense.len() {
            names.push(format!("{attr}.dense{i}.weights"));
            names.push(format!("{attr}.dense{i}.bias"));
            names.push(format!("{attr}.dense_bn{i}.gamma"));
            names.push(format!("{attr}.dense_bn{i}.beta"));
        }
        names.push(format!("{attr}.head.weights"));
        names.push(format!("{attr}.head.bias"));
        names
    }

    /// Non-trainable state (batch-norm running statistics), with names.
    pub fn state_params(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let attr = self.config.attribute.name();
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        for (i, bn) in self.conv_bn.iter_mut().enumerate() {
            out.push((
                format!("{attr}.conv_bn{i}.running_mean"),
                &mut bn.running_mean,
            ));
            out.push((
                format!("{attr}.conv_bn{i}.running_var"),
                &mut bn.running_var,
            ));
        }
        for (i, bn) in self.dense_bn.iter_mut().enumerate() {
            out.push((
                format!("{attr}.dense_bn{i}.running_mean"),
                &mut bn.running_mean,
            ));
            out.push((
                format!("{attr}.dense_bn{i}.running_var"),
                &mut bn.running_var,
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Batched training pass
// ---------------------------------------------------------------------------

struct ConvStageCache<S: Scalar> {
    conv_input: Tensor<S>,
    bn: BatchNormCache<S>,
    relu_out: Tensor<S>,
    /// argmax indices and pre-pool shape, when this stage pools
    pool: Option<(Vec<u32>, Vec<usize>)>,
    dropout_mask: Tensor<S>,
}

struct DenseStageCache<S: Scalar> {
    input: Tensor<S>,
    bn: BatchNormCache<S>,
    relu_out: Tensor<S>,
    dropout_mask: Tensor<S>,
}

/// Activations cached by [`Stream::forward_train`].
pub struct StreamTrainCache<S: Scalar = f32> {
    batch: usize,
    conv_stages: Vec<ConvStageCache<S>>,
    conv_out_shape: Vec<usize>,
    clip_frames: usize,
    lstm: LstmCache<S>,
    dense_stages: Vec<DenseStageCache<S>>,
    head_input: Tensor<S>,
    scores: Tensor<S>,
}

impl<S: Scalar> StreamTrainCache<S> {
    /// Predicted scores, `[batch, 1]`.
    pub fn scores(&self) -> &Tensor<S> {
        &self.scores
    }

    /// Hash of the active-set pattern: every ReLU sign and every pool
    /// argmax. Two forward passes with the same fingerprint stayed in the
    /// same smooth region of the piecewise-differentiable network, which is
    /// the validity condition for finite-difference gradient checks.
    pub fn region_fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        fn fold(hash: &mut u64, v: u64) {
            *hash ^= v;
            *hash = hash.wrapping_mul(PRIME);
        }
        fn fold_signs<S: Scalar>(hash: &mut u64, t: &Tensor<S>) {
            let mut word = 0u64;
            for (i, &v) in t.data().iter().enumerate() {
                if v > S::ZERO {
                    word |= 1 << (i % 64);
                }
                if i % 64 == 63 {
                    fold(hash, word);
                    word = 0;
                }
            }
            fold(hash, word);
        }
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for stage in &self.conv_stages {
            fold_signs(&mut hash, &stage.relu_out);
            if let Some((argmax, _)) = &stage.pool {
                for &idx in argmax {
                    fold(&mut hash, idx as u64);
                }
            }
        }
        for stage in &self.dense_stages {
            fold_signs(&mut hash, &stage.relu_out);
        }
        hash
    }
}

impl<S: Scalar> Stream<S> {
    /// Training-mode forward over a batch of clips. `frames` stacks every
    /// frame of every clip as `[batch*T, C, H, W]` with frame `t` of clip
    /// `b` at row `b*T + t`. Batch norm uses batch statistics (and updates
    /// running ones); dropout draws masks from `rng`.
    pub fn forward_train(
        &mut self,
        frames: &Tensor<S>,
        batch: usize,
        clip_frames: usize,
        rng: &mut SeededRng,
        parallel: bool,
    ) -> Result<(Tensor<S>, StreamTrainCache<S>)> {
        if batch < 2 {
            return Err(Error::Shape(
                "training batch must hold at least 2 clips (batch norm)".into(),
            ));
        }
        if frames.shape()[0] != batch * clip_frames {
            return Err(Error::Shape(format!(
                "expected {} stacked frames, got {}",
                batch * clip_frames,
                frames.shape()[0]
            )));
        }
        let p = self.config.dropout_p;
        let mut x = frames.clone();
        let mut conv_stages = Vec::with_capacity(self.conv.len());
        for (layer, (bn, &pool)) in self
            .conv
            .iter()
            .zip(self.conv_bn.iter_mut().zip(&self.config.pool_plan))
        {
            let conv_input = x;
            let conv_out = layer.forward(&conv_input, parallel)?;
            let (bn_out, bn_cache) = bn.forward_train(&conv_out)?;
            let relu_out = relu_forward(&bn_out);
            let (pooled, pool_info) = if pool {
                let (out, idx) = maxpool2x2_forward(&relu_out)?;
                (out, Some((idx, relu_out.shape().to_vec())))
            } else {
                (relu_out.clone(), None)
            };
            let (dropped, mask) = dropout_forward_train(&pooled, p, rng)?;
            conv_stages.push(ConvStageCache {
                conv_input,
                bn: bn_cache,
                relu_out,
                pool: pool_info,
                dropout_mask: mask,
            });
            x = dropped;
        }
        let conv_out_shape = x.shape().to_vec();
        let features = x.reshape(&[batch * clip_frames, self.flatten_size])?;
        let sequence = gather_sequence(&features, batch, clip_frames);
        let (h, lstm_cache) = self.lstm.forward(sequence, parallel)?;

        let mut y = h;
        let mut dense_stages = Vec::with_capacity(self.dense.len());
        for (layer, bn) in self.dense.iter().zip(self.dense_bn.iter_mut()) {
            let input = y;
            let z = layer.forward(&input, parallel)?;
            let (bn_out, bn_cache) = bn.forward_train(&z)?;
            let relu_out = relu_forward(&bn_out);
            let (dropped, mask) = dropout_forward_train(&relu_out, p, rng)?;
            dense_stages.push(DenseStageCache {
                input,
                bn: bn_cache,
                relu_out,
                dropout_mask: mask,
            });
            y = dropped;
        }
        let head_input = y;
        let logits = self.head.forward(&head_input, parallel)?;
        let scores = sigmoid_forward(&logits);
        let cache = StreamTrainCache {
            batch,
            conv_stages,
            conv_out_shape,
            clip_frames,
            lstm: lstm_cache,
            dense_stages,
            head_input,
            scores: scores.clone(),
        };
        Ok((scores, cache))
    }

    /// Backward pass for [`Stream::forward_train`]. `dscores` is the loss
    /// gradient at the sigmoid output, `[batch, 1]`. Returns parameter
    /// gradients in [`Stream::trainable_params`] order.
    pub fn backward_train(
        &self,
        cache: &StreamTrainCache<S>,
        dscores: &Tensor<S>,
        parallel: bool,
    ) -> Result<Vec<Tensor<S>>> {
        let dlogits = sigmoid_backward(&cache.scores, dscores);
        let (dy, head_grads) = self.head.backward(&cache.head_input, &dlogits, parallel)?;

        let mut dy = dy;
        let mut dense_grads_rev = Vec::new();
        for (stage, (layer, bn)) in cache
            .dense_stages
            .iter()
            .zip(self.dense.iter().zip(&self.dense_bn))
            .rev()
        {
            let d_relu = dropout_backward(&dy, &stage.dropout_mask)?;
            let d_bn = relu_backward(&stage.relu_out, &d_relu);
            let (dz, bn_grads) = bn.backward(&stage.bn, &d_bn)?;
            let (dx, dense_grads) = layer.backward(&stage.input, &dz, parallel)?;
            dense_grads_rev.push((dense_grads, bn_grads));
            dy = dx;
        }

        let (dseq, lstm_grads) = self.lstm.backward(&cache.lstm, &dy, parallel)?;
        let dfeatures = scatter_sequence(&dseq, cache.batch, cache.clip_frames, self.flatten_size);
        let mut dx = dfeatures.reshape(&cache.conv_out_shape)?;

        let mut conv_grads_rev = Vec::new();
        for (stage, (layer, bn)) in cache
            .conv_stages
            .iter()
            .zip(self.conv.iter().zip(&self.conv_bn))
            .rev()
        {
            let d_pooled = dropout_backward(&dx, &stage.dropout_mask)?;
            let d_relu = match &stage.pool {
                Some((idx, shape)) => maxpool2x2_backward(&d_pooled, idx, shape)?,
                None => d_pooled,
            };
            let d_bn = relu_backward(&stage.relu_out, &d_relu);
            let (d_conv, bn_grads) = bn.backward(&stage.bn, &d_bn)?;
            let (d_input, conv_grads) = layer.backward(&stage.conv_input, &d_conv, parallel)?;
            conv_grads_rev.push((conv_grads, bn_grads));
            dx = d_input;
        }

        // Assemble in trainable_params order.
        let mut grads = Vec::new();
        for (conv_g, bn_g) in conv_grads_rev.into_iter().rev() {
            grads.push(conv_g.kernels);
            grads.push(conv_g.bias);
            grads.push(bn_g.gamma);
            grads.push(bn_g.beta);
        }
        for g in lstm_grads.w {
            grads.push(g);
        }
        for g in lstm_grads.u {
            grads.push(g);
        }
        for g in lstm_grads.b {
            grads.push(g);
        }
        for (dense_g, bn_g) in dense_grads_rev.into_iter().rev() {
            grads.push(dense_g.weights);
            grads.push(dense_g.bias);
            grads.push(bn_g.gamma);
            grads.push(bn_g.beta);
        }
        grads.push(head_grads.weights);
        grads.push(head_grads.bias);
        Ok(grads)
    }
}

/// Rearranges stacked per-frame features `[B*T, F]` into a T-step sequence
/// of `[B, F]` tensors.
fn gather_sequence<S: Scalar>(features: &Tensor<S>, batch: usize, steps: usize) -> Vec<Tensor<S>> {
    let f = features.shape()[1];
    (0..steps)
        .map(|t| {
            let mut data = Vec::with_capacity(batch * f);
            for b in 0..batch {
                let row = (b * steps + t) * f;
                data.extend_from_slice(&features.data()[row..row + f]);
            }
            Tensor::from_vec(&[batch, f], data).expect("gather shape")
        })
        .collect()
}

/// Inverse of [`gather_sequence`] for gradients.
fn scatter_sequence<S: Scalar>(
    dseq: &[Tensor<S>],
    batch: usize,
    steps: usize,
    f: usize,
) -> Tensor<S> {
    let mut data = vec![S::ZERO; batch * steps * f];
    for (t, dt) in dseq.iter().enumerate() {
        for b in 0..batch {
            let src = &dt.data()[b * f..(b + 1) * f];
            let dst = (b * steps + t) * f;
            data[dst..dst + f].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[batch * steps, f], data).expect("scatter shape")
}
