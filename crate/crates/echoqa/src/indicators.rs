//! Classical quality-indicator primitives.
//!
//! Deterministic, pure functions used two ways: as standalone no-reference
//! metrics over grayscale frames, and as the analytic scoring oracle behind
//! the synthetic data generator. Intensities are assumed normalized to
//! `[0, 1]` (8-bit inputs are divided by 255 exactly once at ingestion).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A point in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Planar rotation about a center point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RotationSpec {
    pub center: Point2,
    /// Rotation angle in radians, in (-pi, pi].
    pub beta: f64,
}

/// Result of [`rms_contrast`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    /// Standard deviation of the region's intensities (at most 0.5 for
    /// intensities in [0, 1]).
    pub rms: f64,
    /// Mean intensity of the region.
    pub mean_intensity: f64,
}

/// Mean intensity per horizontal depth band, near field first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    pub band_means: Vec<f64>,
}

impl GainProfile {
    pub fn band_count(&self) -> usize {
        self.band_means.len()
    }
}

/// Distance of the projection plane for [`perspective_project`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerspectiveSpec {
    pub d: f64,
}

/// Thresholds and weights for [`gain_anomaly_score`]. The score is
/// `1 - min(1, penalty)` with
///
/// ```text
/// penalty = excess_weight  * (fraction of bands with mean > high)
///         + dropout_weight * (fraction of bands with mean < low)
///         + imbalance_weight * |first band - last band|
/// ```
///
/// The default weights keep the score monotone non-increasing when any
/// single band is raised from mid-intensity to saturation at the default
/// band count of 8.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GainScoreConfig {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub excess_weight: f64,
    pub dropout_weight: f64,
    pub imbalance_weight: f64,
}

impl Default for GainScoreConfig {
    fn default() -> Self {
        Self {
            low_threshold: 0.08,
            high_threshold: 0.85,
            excess_weight: 0.9,
            dropout_weight: 0.9,
            imbalance_weight: 0.2,
        }
    }
}

/// Parameters of [`foreshortening_severity`]: severity is
/// `clamp01(truncation + (1 - truncation) * tilt_weight * tilt / tilt_max)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForeshortenConfig {
    /// Largest tilt magnitude (radians) the severity scale covers.
    pub tilt_max: f64,
    /// Contribution of a full tilt relative to full truncation.
    pub tilt_weight: f64,
}

impl Default for ForeshortenConfig {
    fn default() -> Self {
        Self {
            tilt_max: 0.35,
            tilt_weight: 0.5,
        }
    }
}

/// Rotates `p` about `spec.center` by `spec.beta` (counterclockwise for
/// positive beta in a y-up frame).
pub fn rotate_point(p: Point2, spec: &RotationSpec) -> Point2 {
    let (sin, cos) = spec.beta.sin_cos();
    let dx = p.x - spec.center.x;
    let dy = p.y - spec.center.y;
    Point2 {
        x: dx * cos - dy * sin + spec.center.x,
        y: dx * sin + dy * cos + spec.center.y,
    }
}

/// Root-mean-square contrast over a frame, optionally restricted to a
/// boolean region mask of the same size.
pub fn rms_contrast(frame: &Tensor<f32>, mask: Option<&[bool]>) -> Result<ContrastResult> {
    if frame.rank() != 2 {
        return Err(Error::Shape(format!(
            "rms_contrast expects [h, w], got {:?}",
            frame.shape()
        )));
    }
    if let Some(m) = mask {
        if m.len() != frame.len() {
            return Err(Error::Shape("mask size does not match frame".into()));
        }
    }
    let selected = |i: usize| mask.map_or(true, |m| m[i]);
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for (i, &v) in frame.data().iter().enumerate() {
        if selected(i) {
            count += 1;
            sum += v as f64;
        }
    }
    if count == 0 {
        return Err(Error::Config("rms_contrast over an empty region".into()));
    }
    let mean = sum / count as f64;
    let mut sq = 0.0f64;
    for (i, &v) in frame.data().iter().enumerate() {
        if selected(i) {
            let d = v as f64 - mean;
            sq += d * d;
        }
    }
    Ok(ContrastResult {
        rms: (sq / count as f64).sqrt(),
        mean_intensity: mean,
    })
}

/// Splits the frame's rows into `band_count` contiguous horizontal bands
/// (remainder rows joining the last band) and returns each band's mean
/// intensity, near field (top) first.
pub fn depth_gain_profile(frame: &Tensor<f32>, band_count: usize) -> Result<GainProfile> {
    if frame.rank() != 2 {
        return Err(Error::Shape(format!(
            "depth_gain_profile expects [h, w], got {:?}",
            frame.shape()
        )));
    }
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    if band_count < 1 || band_count > h {
        return Err(Error::Config(format!(
            "band_count {band_count} must be in [1, {h}]"
        )));
    }
    let rows_per_band = h / band_count;
    let mut band_means = Vec::with_capacity(band_count);
    for band in 0..band_count {
        let row_start = band * rows_per_band;
        let row_end = if band + 1 == band_count {
            h
        } else {
            row_start + rows_per_band
        };
        let slice = &frame.data()[row_start * w..row_end * w];
        let sum: f64 = slice.iter().map(|&v| v as f64).sum();
        band_means.push(sum / slice.len() as f64);
    }
    Ok(GainProfile { band_means })
}

/// Scores a gain profile in `[0, 1]`: 1 means no gain anomaly, lower means
/// excess gain, signal dropout, or near/far imbalance. See
/// [`GainScoreConfig`] for the exact functional.
pub fn gain_anomaly_score(profile: &GainProfile, config: &GainScoreConfig) -> f64 {
    let n = profile.band_count();
    if n == 0 {
        return 1.0;
    }
    let excess = profile
        .band_means
        .iter()
        .filter(|&&m| m > config.high_threshold)
        .count() as f64
        / n as f64;
    let dropout = profile
        .band_means
        .iter()
        .filter(|&&m| m < config.low_threshold)
        .count() as f64
        / n as f64;
    let imbalance = (profile.band_means[0] - profile.band_means[n - 1]).abs();
    let penalty = config.excess_weight * excess
        + config.dropout_weight * dropout
        + config.imbalance_weight * imbalance;
    1.0 - penalty.min(1.0)
}

/// Projects a 3-d point onto the plane `z = d` through the origin:
/// `(d*x/z, d*y/z)`. Points on the focal plane are fixed.
pub fn perspective_project(p: (f64, f64, f64), spec: &PerspectiveSpec) -> Result<Point2> {
    let (x, y, z) = p;
    if z == 0.0 {
        return Err(Error::Config("perspective projection undefined at z = 0".into()));
    }
    Ok(Point2 {
        x: spec.d * x / z,
        y: spec.d * y / z,
    })
}

/// Foreshortening severity in `[0, 1]` from apex truncation and tilt
/// magnitude: 0 is an unperturbed apex, 1 a fully truncated one. Monotone
/// non-decreasing in both arguments; full truncation dominates any tilt.
pub fn foreshortening_severity(
    apex_truncation: f64,
    tilt: f64,
    config: &ForeshortenConfig,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&apex_truncation) {
        return Err(Error::Config(format!(
            "apex_truncation {apex_truncation} not in [0, 1]"
        )));
    }
    if !(0.0..=config.tilt_max).contains(&tilt) {
        return Err(Error::Config(format!(
            "tilt {tilt} not in [0, {}]",
            config.tilt_max
        )));
    }
    let tilt_frac = tilt / config.tilt_max;
    Ok((apex_truncation + (1.0 - apex_truncation) * config.tilt_weight * tilt_frac).clamp(0.0, 1.0))
}
