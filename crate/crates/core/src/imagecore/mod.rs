//! Grayscale rasters, ROI cropping and resizing, manifest parsing and the
//! stochastic augmentations used during preprocessing.

mod augment;
mod manifest;
mod raster;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, AugmentSpec};
pub use manifest::{load_manifest, parse_manifest, LesionRecord, Manifest, MANIFEST_COLUMNS};
pub use raster::{decode_raster, encode_png16, encode_png8, load_raster, save_png16};

/// Side length of the square ROIs fed to the descriptor pipeline.
pub const ROI_SIZE: usize = 64;

/// A grayscale raster, optionally stacked along depth.
///
/// Storage is row-major within a slice, slices consecutive:
/// `index = z * width * height + y * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    depth: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}x{depth}"
            )));
        }
        if data.len() != width * height * depth {
            return Err(Error::DimensionMismatch {
                expected: width * height * depth,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    /// Single-slice image built from a `(x, y) -> value` function.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            depth: 1,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get3(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let w = self.width;
        self.data[y * w + x] = value;
    }

    /// Full-image bounding box.
    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width as u32, self.height as u32)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Per-image min-max rescaling into [0, 1]. A constant image maps to zeros.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Self { data, ..*self }
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }

    pub(crate) fn slice(&self, z: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[z * n..(z + 1) * n]
    }
}

/// Pixel rectangle, half-open: covers columns `left..right` and rows `top..bottom`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl BBox {
    pub const fn new(left: u32, top: u32, right: u32, bottom: u32) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.left < self.right && self.top < self.bottom
    }

    pub fn width(&self) -> u32 {
        self.right.saturating_sub(self.left)
    }

    pub fn height(&self) -> u32 {
        self.bottom.saturating_sub(self.top)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.left >= self.left
            && other.top >= self.top
            && other.right <= self.right
            && other.bottom <= self.bottom
    }

    /// Translate a box expressed relative to this box into absolute coordinates.
    pub fn compose(&self, inner: &BBox) -> BBox {
        BBox::new(
            self.left + inner.left,
            self.top + inner.top,
            self.left + inner.right,
            self.top + inner.bottom,
        )
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(left={}, top={}, right={}, bottom={})",
            self.left, self.top, self.right, self.bottom
        )
    }
}

/// Crop every slice of `image` to `bbox`.
pub fn crop_roi(image: &ImageGrid, bbox: &BBox) -> Result<ImageGrid> {
    if !bbox.is_valid() {
        return Err(Error::InvalidBBox(*bbox));
    }
    let bounds = image.bounds();
    if !bounds.contains(bbox) {
        return Err(Error::BBoxOutOfBounds {
            bbox: *bbox,
            bounds,
        });
    }
    let (w, h) = (bbox.width() as usize, bbox.height() as usize);
    let (left, top) = (bbox.left as usize, bbox.top as usize);
    let mut data = Vec::with_capacity(w * h * image.depth);
    for z in 0..image.depth {
        for y in 0..h {
            let start = image.index(left, top + y, z);
            data.extend_from_slice(&image.data[start..start + w]);
        }
    }
    Ok(ImageGrid {
        width: w,
        height: h,
        depth: image.depth,
        data,
    })
}

/// Source coordinate for output sample `i` under corner-aligned sampling.
fn corner_aligned(i: usize, src: usize, dst: usize) -> f64 {
    if dst == 1 {
        (src as f64 - 1.0) / 2.0
    } else {
        i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
    }
}

/// Bilinear resize of every slice with corner-aligned sampling: the first and
/// last output samples coincide with the first and last input samples.
pub fn resize_bilinear(image: &ImageGrid, width: usize, height: usize) -> Result<ImageGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let s = corner_aligned(i, src, dst);
                let i0 = (s.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(width, image.width);
    let ys = taps(height, image.height);

    let mut data = Vec::with_capacity(width * height * image.depth);
    for z in 0..image.depth {
        let src = image.slice(z);
        let at = |x: usize, y: usize| src[y * image.width + x];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(ImageGrid {
        width,
        height,
        depth: image.depth,
        data,
    })
}

/// Crop, then resize to the square ROI size used throughout the pipeline.
pub fn prepare_roi(image: &ImageGrid, bbox: Option<&BBox>) -> Result<ImageGrid> {
    let roi = match bbox {
        Some(b) => crop_roi(image, b)?,
        None => image.clone(),
    };
    resize_bilinear(&roi, ROI_SIZE, ROI_SIZE)
}
