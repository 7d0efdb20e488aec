//! Multiscale Hessian-based structure filter for lesion contours.
//!
//! For every scale in the sweep the image is smoothed, its scale-normalized
//! Hessian computed, and the eigenvalues mapped through a three-factor
//! response. The per-voxel maximum over scales is kept together with the
//! scale that attained it.
//!
//! Single-slice inputs use a two-eigenvalue reduction of the response;
//! stacked inputs use the full three-eigenvalue form.

mod eigen;
mod scale_space;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ImageGrid;

pub use eigen::{eigen2, eigen3, eigen_symmetric, eigenvector_for, residual, SymmetricMatrix};
pub use scale_space::{gaussian_blur, gaussian_kernel, hessian_at, HessianEntries, HessianField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrangiParams {
    /// Plate-vs-line sensitivity (`R_A` term).
    pub alpha: f64,
    /// Blob sensitivity (`R_B` term).
    pub beta: f64,
    /// Structureness threshold (`s` term).
    pub gamma: f64,
    /// Smoothing scales in pixels, strictly increasing.
    pub scales: Vec<f64>,
    /// Zero the response whenever a dominant eigenvalue is positive.
    pub hard_zero_rule: bool,
    /// Clamp a positive largest eigenvalue to zero and lift the smallest to
    /// the middle magnitude before evaluating the response.
    pub soft_suppression: bool,
}

impl Default for FrangiParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.6,
            gamma: 0.0444,
            scales: scale_sweep(1.0, 9.0, 0.2).expect("default sweep is valid"),
            hard_zero_rule: true,
            soft_suppression: false,
        }
    }
}

impl FrangiParams {
    pub fn with_scales(mut self, scales: Vec<f64>) -> Self {
        self.scales = scales;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidArgument("scale list is empty".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("scales must be positive and finite".into()));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("scales must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Inclusive arithmetic sweep `start, start + step, ..., stop`.
///
/// Values are computed as `start + i * step` and rounded to 12 decimals so
/// `1.0..=9.0` by `0.2` yields exactly 41 scales.
pub fn scale_sweep(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(Error::InvalidArgument(format!(
            "invalid scale sweep {start}:{stop}:{step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Hessian eigenvalues of one voxel, ordered `|l1| <= |l2| <= |l3|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenTriple {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl EigenTriple {
    /// Orders arbitrary eigenvalues by magnitude.
    pub fn from_unordered(values: [f64; 3]) -> Self {
        let mut v = values;
        v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        Self {
            l1: v[0],
            l2: v[1],
            l3: v[2],
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.l1.abs() <= self.l2.abs() && self.l2.abs() <= self.l3.abs()
    }

    /// Positive `l3` is clamped to zero and `l1` lifted to `sign(l1) |l2|`.
    pub fn soft_suppressed(self) -> Self {
        if self.l3 > 0.0 {
            Self {
                l1: self.l2.abs().copysign(self.l1),
                l2: self.l2,
                l3: 0.0,
            }
        } else {
            self
        }
    }
}

/// Three-eigenvalue response in [0, 1].
pub fn frangi_response(eigs: EigenTriple, params: &FrangiParams) -> f64 {
    let EigenTriple { l1, l2, l3 } = eigs;
    if params.hard_zero_rule && (l2 > 0.0 || l3 > 0.0) {
        return 0.0;
    }
    let (a1, a2, a3) = (l1.abs(), l2.abs(), l3.abs());
    let cross = a2 * a3;
    if a3 == 0.0 || cross == 0.0 {
        return 0.0;
    }
    let ra = a2 / a3;
    let rb = a1 / cross.sqrt();
    let s2 = l1 * l1 + l2 * l2 + l3 * l3;
    let plate = 1.0 - (-(ra * ra) / (2.0 * params.alpha * params.alpha)).exp();
    let blob = (-(rb * rb) / (2.0 * params.beta * params.beta)).exp();
    let structure = 1.0 - (-s2 / (2.0 * params.gamma * params.gamma)).exp();
    (plate * blob * structure).clamp(0.0, 1.0)
}

/// Two-eigenvalue reduction for single-slice images, `|l1| <= |l2|`.
pub fn frangi_response_2d(l1: f64, l2: f64, params: &FrangiParams) -> f64 {
    if params.hard_zero_rule && l2 > 0.0 {
        return 0.0;
    }
    let a2 = l2.abs();
    if a2 == 0.0 {
        return 0.0;
    }
    let rb = l1.abs() / a2;
    let s2 = l1 * l1 + l2 * l2;
    let blob = (-(rb * rb) / (2.0 * params.beta * params.beta)).exp();
    let structure = 1.0 - (-s2 / (2.0 * params.gamma * params.gamma)).exp();
    (blob * structure).clamp(0.0, 1.0)
}

fn planar_response(l1: f64, l2: f64, params: &FrangiParams) -> f64 {
    let (l1, l2) = if params.soft_suppression && l2 > 0.0 {
        // the largest eigenvalue is clamped, the smallest follows it
        (0.0f64.copysign(l1), 0.0)
    } else {
        (l1, l2)
    };
    frangi_response_2d(l1, l2, params)
}

/// Per-voxel response at a single scale.
pub fn response_at_scale(image: &ImageGrid, sigma: f64, params: &FrangiParams) -> Result<Vec<f64>> {
    let field = hessian_at(image, sigma)?;
    Ok(match &field.entries {
        HessianEntries::Planar(v) => v
            .par_iter()
            .map(|&[xx, xy, yy]| {
                let [l1, l2] = eigen2(xx, xy, yy);
                planar_response(l1, l2, params)
            })
            .collect(),
        HessianEntries::Volumetric(v) => v
            .par_iter()
            .map(|&m| {
                let [l1, l2, l3] = eigen3(m);
                let mut eigs = EigenTriple { l1, l2, l3 };
                if params.soft_suppression {
                    eigs = eigs.soft_suppressed();
                }
                frangi_response(eigs, params)
            })
            .collect(),
    })
}

/// One response map per scale in `params.scales`, in sweep order.
pub fn scale_responses(image: &ImageGrid, params: &FrangiParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    params
        .scales
        .par_iter()
        .map(|&sigma| response_at_scale(image, sigma, params))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMap {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    /// Maximum response over scales, in [0, 1].
    pub values: Vec<f64>,
    /// Scale attaining the maximum (first such scale on ties).
    pub argmax_scale: Vec<f64>,
}

impl ResponseMap {
    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::new(self.width, self.height, self.depth, self.values.clone())
            .expect("response map dimensions are consistent")
    }

    pub fn max(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
    }
}

/// Max-over-scales aggregation of the per-scale responses.
pub fn frangi_filter(image: &ImageGrid, params: &FrangiParams) -> Result<ResponseMap> {
    let per_scale = scale_responses(image, params)?;
    let n = image.len();
    let mut values = vec![0.0; n];
    let mut argmax_scale = vec![params.scales[0]; n];
    for (sigma, resp) in params.scales.iter().zip(&per_scale) {
        for i in 0..n {
            if resp[i] > values[i] {
                values[i] = resp[i];
                argmax_scale[i] = *sigma;
            }
        }
    }
    Ok(ResponseMap {
        width: image.width(),
        height: image.height(),
        depth: image.depth(),
        values,
        argmax_scale,
    })
}
