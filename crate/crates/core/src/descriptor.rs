//! GeM-pooled, L2-normalized descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frangi::{scale_responses, FrangiParams};
use crate::imagecore::ImageGrid;

/// Channel-major (`C x H x W`) non-negative activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub encoder_id: String,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
        encoder_id: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * width * height {
            return Err(Error::DimensionMismatch {
                expected: channels * width * height,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("feature map values must be >= 0".into()));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
            encoder_id: encoder_id.into(),
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Multiply every activation by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }
}

/// Contiguous partition of `n` scales into `bands` groups, as index ranges.
pub fn band_ranges(n: usize, bands: usize) -> Vec<std::ops::Range<usize>> {
    (0..bands).map(|b| (b * n / bands)..((b + 1) * n / bands)).collect()
}

/// Built-in encoder: per-band maxima of the multiscale response plus the raw
/// intensity channel.
pub fn feature_stack(image: &ImageGrid, params: &FrangiParams, band_count: usize) -> Result<FeatureMap> {
    if image.depth() != 1 {
        return Err(Error::InvalidArgument(format!(
            "feature stack expects a single slice, got depth {}",
            image.depth()
        )));
    }
    if band_count == 0 || band_count > params.scales.len() {
        return Err(Error::InvalidArgument(format!(
            "band count {band_count} must lie in 1..={}",
            params.scales.len()
        )));
    }
    let per_scale = scale_responses(image, params)?;
    let n = image.len();
    let mut data = Vec::with_capacity((band_count + 1) * n);
    for range in band_ranges(per_scale.len(), band_count) {
        let mut band = vec![0.0f64; n];
        for resp in &per_scale[range] {
            for (b, &r) in band.iter_mut().zip(resp) {
                *b = b.max(r);
            }
        }
        data.extend(band);
    }
    data.extend(image.data().iter().map(|v| v.max(0.0)));
    FeatureMap::new(
        band_count + 1,
        image.width(),
        image.height(),
        data,
        builtin_encoder_id(band_count),
    )
}

pub fn builtin_encoder_id(band_count: usize) -> String {
    format!("builtin-frangi-stack/b{band_count}")
}

/// Generalized mean per channel, `(mean(x^p))^(1/p)`, after clamping to `epsilon`.
pub fn gem_pool(fm: &FeatureMap, p: f64, epsilon: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("GeM exponent must be > 0, got {p}")));
    }
    (0..fm.channels).map(|c| gem_channel(fm.channel(c), p, epsilon)).collect()
}

/// GeM of a single channel. Evaluated relative to the channel maximum so
/// large exponents neither overflow nor underflow.
pub fn gem_channel(values: &[f64], p: f64, epsilon: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty channel".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GeM input"));
    }
    let n = values.len() as f64;
    if p == 1.0 {
        return Ok(values.iter().map(|v| v.max(epsilon)).sum::<f64>() / n);
    }
    let peak = values.iter().fold(epsilon, |m, v| m.max(*v));
    let mean = values
        .iter()
        .map(|v| (v.max(epsilon) / peak).powf(p))
        .sum::<f64>()
        / n;
    Ok(peak * mean.powf(1.0 / p))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector"));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    BuiltinFrangiStack { band_count: usize },
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub encoder: Encoder,
    pub gem_p: f64,
    pub epsilon: f64,
    pub frangi: FrangiParams,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            encoder: Encoder::BuiltinFrangiStack { band_count: 4 },
            gem_p: 3.0,
            epsilon: 1e-6,
            frangi: FrangiParams::default(),
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gem_p > 0.0 && self.gem_p.is_finite()) {
            return Err(Error::InvalidArgument(format!("gem_p must be > 0, got {}", self.gem_p)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be > 0".into()));
        }
        if let Encoder::BuiltinFrangiStack { .. } = self.encoder {
            self.frangi.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub vector: Vec<f64>,
    pub encoder_id: String,
    pub gem_p: f64,
}

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// What a descriptor is computed from.
#[derive(Clone, Copy, Debug)]
pub enum DescribeInput<'a> {
    Image(&'a ImageGrid),
    Features(&'a FeatureMap),
}

/// `l2_normalize(gem_pool(encode(input)))`.
pub fn describe(input: DescribeInput<'_>, cfg: &DescriptorConfig) -> Result<Descriptor> {
    cfg.validate()?;
    let built;
    let fm = match (input, &cfg.encoder) {
        (DescribeInput::Features(fm), Encoder::Precomputed) => fm,
        (DescribeInput::Image(img), Encoder::BuiltinFrangiStack { band_count }) => {
            built = feature_stack(img, &cfg.frangi, *band_count)?;
            &built
        }
        (DescribeInput::Image(_), Encoder::Precomputed) => {
            return Err(Error::InvalidArgument(
                "precomputed encoder needs a feature map, got an image".into(),
            ))
        }
        (DescribeInput::Features(_), Encoder::BuiltinFrangiStack { .. }) => {
            return Err(Error::InvalidArgument(
                "builtin encoder needs an image, got a feature map".into(),
            ))
        }
    };
    let pooled = gem_pool(fm, cfg.gem_p, cfg.epsilon)?;
    Ok(Descriptor {
        vector: l2_normalize(&pooled)?,
        encoder_id: fm.encoder_id.clone(),
        gem_p: cfg.gem_p,
    })
}

/// Baseline descriptor: the flattened raw pixels, L2-normalized.
pub fn raw_pixel_descriptor(image: &ImageGrid) -> Result<Descriptor> {
    Ok(Descriptor {
        vector: l2_normalize(image.data())?,
        encoder_id: "raw-pixels".into(),
        gem_p: 1.0,
    })
}
