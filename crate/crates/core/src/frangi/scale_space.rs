use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::ImageGrid;

/// Whole-sample symmetric reflection (`d c b | a b c d | c b a`), applied
/// repeatedly so any offset maps into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
    Z,
}

fn convolve_axis(src: &[f64], dims: (usize, usize, usize), axis: Axis, taps: &[f64]) -> Vec<f64> {
    let (w, h, d) = dims;
    let radius = (taps.len() / 2) as isize;
    let (n, stride) = match axis {
        Axis::X => (w, 1),
        Axis::Y => (h, w),
        Axis::Z => (d, w * h),
    };
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(row, dst)| {
        let z = row / h;
        let y = row % h;
        for (x, px) in dst.iter_mut().enumerate() {
            let (pos, base) = match axis {
                Axis::X => (x, (z * h + y) * w),
                Axis::Y => (y, z * h * w + x),
                Axis::Z => (z, y * w + x),
            };
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let j = reflect(pos as isize + k as isize - radius, n);
                acc += t * src[base + j * stride];
            }
            *px = acc;
        }
    });
    out
}

/// Separable Gaussian smoothing along x, y (and z for stacked images) with
/// reflect padding. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(image: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let taps = gaussian_kernel(sigma);
    let dims = (image.width(), image.height(), image.depth());
    let mut data = convolve_axis(image.data(), dims, Axis::X, &taps);
    data = convolve_axis(&data, dims, Axis::Y, &taps);
    if image.depth() > 1 {
        data = convolve_axis(&data, dims, Axis::Z, &taps);
    }
    Ok(image.with_data(data))
}

/// Per-voxel symmetric Hessian entries.
#[derive(Clone, Debug, PartialEq)]
pub enum HessianEntries {
    /// `[xx, xy, yy]` for single-slice images.
    Planar(Vec<[f64; 3]>),
    /// `[xx, xy, xz, yy, yz, zz]` for stacked images.
    Volumetric(Vec<[f64; 6]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub sigma: f64,
    pub entries: HessianEntries,
}

impl HessianField {
    pub fn len(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_axis(axis: &'static str, size: usize) -> Result<()> {
    if size < 3 {
        return Err(Error::ImageTooSmall { axis, size });
    }
    Ok(())
}

/// Scale-normalized Hessian: central second differences of the
/// `sigma`-blurred image, each multiplied by `sigma^2`.
pub fn hessian_at(image: &ImageGrid, sigma: f64) -> Result<HessianField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("hessian sigma must be > 0, got {sigma}")));
    }
    let (w, h, d) = (image.width(), image.height(), image.depth());
    check_axis("x", w)?;
    check_axis("y", h)?;
    if d > 1 {
        check_axis("z", d)?;
    }
    let blurred = gaussian_blur(image, sigma)?;
    let b = blurred.data();
    let norm = sigma * sigma;
    let at = |x: isize, y: isize, z: isize| -> f64 {
        b[(reflect(z, d) * h + reflect(y, h)) * w + reflect(x, w)]
    };
    let coords = |i: usize| ((i % w) as isize, ((i / w) % h) as isize, (i / (w * h)) as isize);

    let entries = if d == 1 {
        let v: Vec<[f64; 3]> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y, z) = coords(i);
                let c = at(x, y, z);
                let xx = at(x + 1, y, z) - 2.0 * c + at(x - 1, y, z);
                let yy = at(x, y + 1, z) - 2.0 * c + at(x, y - 1, z);
                let xy = (at(x + 1, y + 1, z) - at(x + 1, y - 1, z) - at(x - 1, y + 1, z)
                    + at(x - 1, y - 1, z))
                    / 4.0;
                [xx * norm, xy * norm, yy * norm]
            })
            .collect();
        HessianEntries::Planar(v)
    } else {
        let v: Vec<[f64; 6]> = (0..w * h * d)
            .into_par_iter()
            .map(|i| {
                let (x, y, z) = coords(i);
                let c = at(x, y, z);
                let xx = at(x + 1, y, z) - 2.0 * c + at(x - 1, y, z);
                let yy = at(x, y + 1, z) - 2.0 * c + at(x, y - 1, z);
                let zz = at(x, y, z + 1) - 2.0 * c + at(x, y, z - 1);
                let xy = (at(x + 1, y + 1, z) - at(x + 1, y - 1, z) - at(x - 1, y + 1, z)
                    + at(x - 1, y - 1, z))
                    / 4.0;
                let xz = (at(x + 1, y, z + 1) - at(x + 1, y, z - 1) - at(x - 1, y, z + 1)
                    + at(x - 1, y, z - 1))
                    / 4.0;
                let yz = (at(x, y + 1, z + 1) - at(x, y + 1, z - 1) - at(x, y - 1, z + 1)
                    + at(x, y - 1, z - 1))
                    / 4.0;
                [xx * norm, xy * norm, xz * norm, yy * norm, yz * norm, zz * norm]
            })
            .collect();
        HessianEntries::Volumetric(v)
    };
    Ok(HessianField {
        width: w,
        height: h,
        depth: d,
        sigma,
        entries,
    })
}
