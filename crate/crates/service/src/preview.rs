//! Multiscale response rendering shared by `cbir filter-preview` and
//! `POST /api/v1/filter-preview`.

use cbir_core::descriptor::band_ranges;
use cbir_core::frangi::{frangi_filter, scale_sweep, FrangiParams};
use cbir_core::imagecore::{encode_png16, ImageGrid};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Overrides applied on top of the default filter parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreviewOptions {
    /// `start:stop:step`, inclusive.
    pub scales: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// `(band, band_count)`: keep only that contiguous slice of the sweep.
    pub band: Option<(usize, usize)>,
}

/// JSON written next to the rendered response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewSidecar {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub scales: Vec<f64>,
    pub max_response: f64,
    /// Row-major scale attaining the maximum at each pixel.
    pub argmax_scale: Vec<f64>,
}

pub fn parse_scales(spec: &str) -> ServiceResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[start, stop, step]) => Ok(scale_sweep(start, stop, step)?),
        _ => Err(ServiceError::BadRequest(format!(
            "scales must look like start:stop:step, got `{spec}`"
        ))),
    }
}

impl PreviewOptions {
    pub fn params(&self) -> ServiceResult<FrangiParams> {
        let mut p = FrangiParams::default();
        if let Some(s) = &self.scales {
            p.scales = parse_scales(s)?;
        }
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.beta = self.beta.unwrap_or(p.beta);
        p.gamma = self.gamma.unwrap_or(p.gamma);
        if let Some((band, count)) = self.band {
            if count == 0 || count > p.scales.len() || band >= count {
                return Err(ServiceError::BadRequest(format!(
                    "band {band} of {count} is invalid for {} scales",
                    p.scales.len()
                )));
            }
            p.scales = p.scales[band_ranges(p.scales.len(), count)[band].clone()].to_vec();
        }
        p.validate()?;
        Ok(p)
    }
}

/// 16-bit PNG of the response (slices stacked vertically) and its sidecar.
pub fn render(image: &ImageGrid, params: &FrangiParams) -> ServiceResult<(Vec<u8>, PreviewSidecar)> {
    let map = frangi_filter(image, params)?;
    let strip = ImageGrid::new(map.width, map.height * map.depth, 1, map.values.clone())?;
    let png = encode_png16(&strip)?;
    let sidecar = PreviewSidecar {
        width: map.width,
        height: map.height,
        depth: map.depth,
        alpha: params.alpha,
        beta: params.beta,
        gamma: params.gamma,
        scales: params.scales.clone(),
        max_response: map.max().1,
        argmax_scale: map.argmax_scale,
    };
    Ok((png, sidecar))
}
