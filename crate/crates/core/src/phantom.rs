//! Synthetic lesion phantoms: bright blobs, bright ridges and structureless
//! noise on 64x64 grids, with patient/study metadata for retrieval experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imagecore::{ImageGrid, ROI_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Blob,
    Ridge,
    Noise,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 3] = [PhantomKind::Blob, PhantomKind::Ridge, PhantomKind::Noise];

    pub fn label(&self) -> &'static str {
        match self {
            PhantomKind::Blob => "blob",
            PhantomKind::Ridge => "ridge",
            PhantomKind::Noise => "noise",
        }
    }
}

/// Background level and additive noise shared by the structured phantoms.
const BACKGROUND: f64 = 0.15;
const BACKGROUND_NOISE: f64 = 0.04;

fn noisy_background(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(BACKGROUND, BACKGROUND_NOISE).expect("valid std");
    (0..ROI_SIZE * ROI_SIZE).map(|_| normal.sample(rng)).collect()
}

fn finish(data: Vec<f64>) -> ImageGrid {
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageGrid::new(ROI_SIZE, ROI_SIZE, 1, data)
        .expect("phantom data is finite")
        .normalized()
}

/// Isotropic bright Gaussian blob at a random position near the centre.
pub fn blob(rng: &mut ChaCha8Rng) -> ImageGrid {
    let mut data = noisy_background(rng);
    let sigma = rng.random_range(2.5..5.0);
    let amp = rng.random_range(0.5..0.85);
    let cx = rng.random_range(22.0..42.0);
    let cy = rng.random_range(22.0..42.0);
    for (i, v) in data.iter_mut().enumerate() {
        let (x, y) = ((i % ROI_SIZE) as f64, (i / ROI_SIZE) as f64);
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        *v += amp * (-r2 / (2.0 * sigma * sigma)).exp();
    }
    finish(data)
}

/// Straight bright ridge with a Gaussian cross-section and random orientation.
pub fn ridge(rng: &mut ChaCha8Rng) -> ImageGrid {
    let mut data = noisy_background(rng);
    let width = rng.random_range(1.0..2.2);
    let amp = rng.random_range(0.5..0.85);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let cx = rng.random_range(24.0..40.0);
    let cy = rng.random_range(24.0..40.0);
    let (nx, ny) = (-theta.sin(), theta.cos());
    for (i, v) in data.iter_mut().enumerate() {
        let (x, y) = ((i % ROI_SIZE) as f64, (i / ROI_SIZE) as f64);
        let d = (x - cx) * nx + (y - cy) * ny;
        *v += amp * (-d * d / (2.0 * width * width)).exp();
    }
    finish(data)
}

/// Structureless Gaussian noise around mid-gray.
pub fn noise(rng: &mut ChaCha8Rng) -> ImageGrid {
    let std = rng.random_range(0.08..0.2);
    let normal = Normal::new(0.5, std).expect("valid std");
    finish((0..ROI_SIZE * ROI_SIZE).map(|_| normal.sample(rng)).collect())
}

pub fn generate(kind: PhantomKind, rng: &mut ChaCha8Rng) -> ImageGrid {
    match kind {
        PhantomKind::Blob => blob(rng),
        PhantomKind::Ridge => ridge(rng),
        PhantomKind::Noise => noise(rng),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub kind: PhantomKind,
    pub patient_id: String,
    pub study_id: String,
    pub image: ImageGrid,
}

/// How synthetic patients are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatientLayout {
    /// Cases spread round-robin over `n` patients, so every patient mixes kinds.
    Mixed(usize),
    /// Each kind gets its own `n` patients, so every patient is label-homogeneous.
    Homogeneous(usize),
}

/// `per_kind` cases of each kind, interleaved (blob, ridge, noise, blob, ...).
pub fn corpus(per_kind: usize, layout: PatientLayout, seed: u64) -> Vec<PhantomCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_kind * 3);
    for i in 0..per_kind {
        for (k, kind) in PhantomKind::ALL.into_iter().enumerate() {
            let serial = i * 3 + k;
            let patient = match layout {
                PatientLayout::Mixed(n) => serial % n.max(1),
                PatientLayout::Homogeneous(n) => k * n.max(1) + i % n.max(1),
            };
            out.push(PhantomCase {
                id: format!("{}-{i:03}", kind.label()),
                kind,
                patient_id: format!("P{patient:03}"),
                study_id: format!("P{patient:03}-S{}", i % 2),
                image: generate(kind, &mut rng),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let a = corpus(4, PatientLayout::Mixed(5), 1);
        assert_eq!(a.len(), 12);
        assert_eq!(a, corpus(4, PatientLayout::Mixed(5), 1));
        for c in &a {
            assert_eq!((c.image.width(), c.image.height()), (64, 64));
            assert_eq!(c.image.min_max(), (0.0, 1.0));
        }
    }

    #[test]
    fn homogeneous_patients_have_one_kind() {
        let cases = corpus(6, PatientLayout::Homogeneous(2), 3);
        for c in &cases {
            let kinds: Vec<_> = cases.iter().filter(|o| o.patient_id == c.patient_id).map(|o| o.kind).collect();
            assert!(kinds.iter().all(|&k| k == c.kind));
            assert_eq!(kinds.len(), 3);
        }
    }
}
