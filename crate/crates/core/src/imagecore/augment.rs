use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageGrid;
use crate::error::{Error, Result};
use crate::frangi::gaussian_blur;

/// Stochastic preprocessing: flips, intensity jitter and Gaussian blur.
///
/// Intensity jitter on grayscale is a multiplicative contrast factor drawn from
/// `[1 - j, 1 + j]` followed by an additive brightness offset from `[-j, j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip_h: f64,
    pub flip_v: f64,
    /// `[min, max]` blur sigma in pixels. `[0, 0]` disables blurring.
    pub blur_sigma_range: [f64; 2],
    pub intensity_jitter: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip_h: 0.5,
            flip_v: 0.5,
            blur_sigma_range: [0.0, 1.0],
            intensity_jitter: 0.1,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// A spec that leaves every image untouched.
    pub fn identity(seed: u64) -> Self {
        Self {
            flip_h: 0.0,
            flip_v: 0.0,
            blur_sigma_range: [0.0, 0.0],
            intensity_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.flip_h) || !prob(self.flip_v) {
            return Err(Error::InvalidArgument("flip probabilities must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.blur_sigma_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "blur sigma range must satisfy 0 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.intensity_jitter) {
            return Err(Error::InvalidArgument("intensity jitter must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn flip(image: &ImageGrid, horizontal: bool) -> ImageGrid {
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity(image.len());
    for z in 0..image.depth() {
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) };
                data.push(image.get3(sx, sy, z));
            }
        }
    }
    image.with_data(data)
}

/// Apply `spec` to `image`. Pure in `(image, spec)`: the random stream is
/// seeded from `spec.seed` and every draw happens regardless of which branches fire.
pub fn augment(image: &ImageGrid, spec: &AugmentSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let do_flip_h = rng.random_bool(spec.flip_h);
    let do_flip_v = rng.random_bool(spec.flip_v);
    let [lo, hi] = spec.blur_sigma_range;
    let sigma = lo + (hi - lo) * rng.random::<f64>();
    let j = spec.intensity_jitter;
    let contrast = 1.0 + j * (2.0 * rng.random::<f64>() - 1.0);
    let brightness = j * (2.0 * rng.random::<f64>() - 1.0);

    let mut out = image.clone();
    if do_flip_h {
        out = flip(&out, true);
    }
    if do_flip_v {
        out = flip(&out, false);
    }
    if sigma > 0.0 {
        out = gaussian_blur(&out, sigma)?;
    }
    let data = out
        .data()
        .iter()
        .map(|&v| (v * contrast + brightness).clamp(0.0, 1.0))
        .collect();
    Ok(out.with_data(data))
}
