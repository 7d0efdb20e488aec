//! Cosine similarity, the margin triplet loss and its gradient, and an affine
//! embedding head trained with momentum SGD on mined triplets.

use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::descriptor::l2_norm;
use crate::error::{Error, Result};

fn check_pair(i: &[f64], j: &[f64]) -> Result<(f64, f64)> {
    if i.len() != j.len() {
        return Err(Error::DimensionMismatch {
            expected: i.len(),
            found: j.len(),
        });
    }
    let (ni, nj) = (l2_norm(i), l2_norm(j));
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((ni, nj))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `i . j / (|i| |j|)`, clamped to [-1, 1].
pub fn cosine_similarity(i: &[f64], j: &[f64]) -> Result<f64> {
    let (ni, nj) = check_pair(i, j)?;
    // sqrt(|i|^2 |j|^2) makes cos(i, i) exactly 1
    let denom = (dot(i, i) * dot(j, j)).sqrt();
    let denom = if denom.is_normal() { denom } else { ni * nj };
    Ok((dot(i, j) / denom).clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity`, in [0, 2].
pub fn cosine_distance(i: &[f64], j: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(i, j)?)
}

/// `0.5 * max(0, m + d(a, p) - d(a, n))` with `d` the cosine distance.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    let dap = cosine_distance(a, p)?;
    let dan = cosine_distance(a, n)?;
    Ok(0.5 * (margin + dap - dan).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Gradient of `cos(x, y)` with respect to `x`:
/// `y / (|x||y|) - cos * x / |x|^2`.
fn cos_grad(x: &[f64], y: &[f64], nx: f64, ny: f64, cos: f64) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| yi / (nx * ny) - cos * xi / (nx * nx))
        .collect()
}

/// Analytic gradients of [`triplet_loss`]. All gradients vanish when the hinge
/// is inactive (including exactly at the hinge).
pub fn triplet_loss_grad(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<TripletGrad> {
    let (na, np) = check_pair(a, p)?;
    let (_, nn) = check_pair(a, n)?;
    // Unclamped cosines keep the gradient consistent with the loss surface.
    let cap = dot(a, p) / (na * np);
    let can = dot(a, n) / (na * nn);
    let hinge = margin + (1.0 - cap) - (1.0 - can);
    let dim = a.len();
    if hinge <= 0.0 {
        return Ok(TripletGrad {
            loss: 0.0,
            anchor: vec![0.0; dim],
            positive: vec![0.0; dim],
            negative: vec![0.0; dim],
        });
    }
    // L = 0.5 * (m - cos(a,p) + cos(a,n))
    let dcap_da = cos_grad(a, p, na, np, cap);
    let dcan_da = cos_grad(a, n, na, nn, can);
    let dcap_dp = cos_grad(p, a, np, na, cap);
    let dcan_dn = cos_grad(n, a, nn, na, can);
    Ok(TripletGrad {
        loss: 0.5 * hinge,
        anchor: dcap_da
            .iter()
            .zip(&dcan_da)
            .map(|(x, y)| 0.5 * (y - x))
            .collect(),
        positive: dcap_dp.iter().map(|x| -0.5 * x).collect(),
        negative: dcan_dn.iter().map(|x| 0.5 * x).collect(),
    })
}

/// Indices of an anchor, a same-label positive and a different-label negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub a: usize,
    pub p: usize,
    pub n: usize,
}

/// Draw `per_anchor` triplets for every item whose class has at least two
/// members; positives and negatives are uniform over the eligible items.
pub fn mine_triplets<T: Eq + Hash>(labels: &[T], per_anchor: usize, seed: u64) -> Result<Vec<Triplet>> {
    let mut class_of = Vec::with_capacity(labels.len());
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut ids: HashMap<&T, usize> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        let next = ids.len();
        let c = *ids.entry(l).or_insert(next);
        if c == members.len() {
            members.push(Vec::new());
        }
        members[c].push(i);
        class_of.push(c);
    }
    if members.len() < 2 {
        return Err(Error::TooFewClasses(members.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (a, &c) in class_of.iter().enumerate() {
        let same = &members[c];
        if same.len() < 2 {
            continue;
        }
        let others = labels.len() - same.len();
        for _ in 0..per_anchor {
            let mut p = a;
            while p == a {
                p = *same.choose(&mut rng).expect("class has members");
            }
            // uniform over items outside the anchor's class
            let mut k = rng.random_range(0..others);
            let n = class_of
                .iter()
                .enumerate()
                .filter(|(_, &cls)| cls != c)
                .find_map(|(i, _)| {
                    if k == 0 {
                        Some(i)
                    } else {
                        k -= 1;
                        None
                    }
                })
                .expect("negative index in range");
            out.push(Triplet { a, p, n });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub seed: u64,
    pub triplets_per_anchor: usize,
    /// `[input_dim, output_dim]`; `None` keeps the descriptor dimension.
    pub head_dims: Option<[usize; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.8,
            learning_rate: 0.01,
            momentum: 0.9,
            iterations: 50,
            seed: 0,
            triplets_per_anchor: 4,
            head_dims: None,
        }
    }
}

/// Triplet sets up to this size are trained full-batch.
pub const FULL_BATCH_LIMIT: usize = 10_000;
pub const MINI_BATCH: usize = 256;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument("margin must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.triplets_per_anchor == 0 {
            return Err(Error::InvalidArgument("triplets_per_anchor must be >= 1".into()));
        }
        Ok(())
    }

    /// Cosine decay from `learning_rate` at iteration 0 to 0 at the last iteration.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.learning_rate;
        }
        let t = iteration as f64 / (self.iterations - 1) as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// `normalize(W x + b)`, with `W` stored row-major (`output_dim x input_dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHead {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EmbeddingHead {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    /// Identity when square, otherwise Gaussian weights with std `1/sqrt(input_dim)`.
    pub fn init(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        if input_dim == output_dim {
            return Self::identity(input_dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
        Self {
            input_dim,
            output_dim,
            weights: (0..input_dim * output_dim).map(|_| normal.sample(&mut rng)).collect(),
            bias: vec![0.0; output_dim],
        }
    }

    pub fn new(input_dim: usize, output_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != input_dim * output_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim * output_dim,
                found: weights.len(),
            });
        }
        if bias.len() != output_dim {
            return Err(Error::DimensionMismatch {
                expected: output_dim,
                found: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        Ok(Self {
            input_dim,
            output_dim,
            weights,
            bias,
        })
    }

    /// Affine map without normalization.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::descriptor::l2_normalize(&self.project(x)?)
    }
}

pub fn embed(head: &EmbeddingHead, descriptor: &crate::descriptor::Descriptor) -> Result<Vec<f64>> {
    head.embed(&descriptor.vector)
}

/// Mean triplet loss of `head` over `triplets`.
pub fn mean_triplet_loss(
    head: &EmbeddingHead,
    descriptors: &[Vec<f64>],
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let z: Vec<Vec<f64>> = descriptors.iter().map(|d| head.project(d)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for t in triplets {
        total += triplet_loss(&z[t.a], &z[t.p], &z[t.n], margin)?;
    }
    Ok(total / triplets.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub head: EmbeddingHead,
    pub triplet_count: usize,
    pub updates: usize,
    pub initial_loss: f64,
    /// Training loss of the returned head.
    pub final_loss: f64,
    /// Full training loss after each update.
    pub loss_history: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

struct Grads {
    loss: f64,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn batch_gradient(
    head: &EmbeddingHead,
    descriptors: &[Vec<f64>],
    batch: &[Triplet],
    margin: f64,
) -> Result<Grads> {
    let (din, dout) = (head.input_dim, head.output_dim);
    let mut gw = vec![0.0; din * dout];
    let mut gb = vec![0.0; dout];
    let mut loss = 0.0;
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut proj = |i: usize| -> Result<Vec<f64>> {
        if let Some(z) = cache.get(&i) {
            return Ok(z.clone());
        }
        let z = head.project(&descriptors[i])?;
        cache.insert(i, z.clone());
        Ok(z)
    };
    let scale = 1.0 / batch.len() as f64;
    for t in batch {
        let (za, zp, zn) = (proj(t.a)?, proj(t.p)?, proj(t.n)?);
        let g = triplet_loss_grad(&za, &zp, &zn, margin)?;
        loss += g.loss * scale;
        if g.loss == 0.0 {
            continue;
        }
        for (idx, gz) in [(t.a, &g.anchor), (t.p, &g.positive), (t.n, &g.negative)] {
            let x = &descriptors[idx];
            for (o, &go) in gz.iter().enumerate() {
                let go = go * scale;
                gb[o] += go;
                for (w, xi) in gw[o * din..(o + 1) * din].iter_mut().zip(x) {
                    *w += go * xi;
                }
            }
        }
    }
    Ok(Grads {
        loss,
        weights: gw,
        bias: gb,
    })
}

/// Fit an [`EmbeddingHead`] over frozen descriptors with momentum SGD on
/// mined triplets and a cosine-decayed learning rate.
///
/// The loss over all mined triplets is tracked after every update and the
/// lowest-loss parameters (the initial ones included) are returned, so the
/// result never scores worse than the initialization on its training set.
pub fn train_head<T: Eq + Hash>(
    descriptors: &[Vec<f64>],
    labels: &[T],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if descriptors.is_empty() {
        return Err(Error::InvalidArgument("descriptor table is empty".into()));
    }
    if descriptors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: descriptors.len(),
            found: labels.len(),
        });
    }
    let dim = descriptors[0].len();
    if let Some(d) = descriptors.iter().find(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: d.len(),
        });
    }
    let [din, dout] = cfg.head_dims.unwrap_or([dim, dim]);
    if din != dim {
        return Err(Error::DimensionMismatch {
            expected: din,
            found: dim,
        });
    }

    let triplets = mine_triplets(labels, cfg.triplets_per_anchor, cfg.seed)?;
    if triplets.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has two members, cannot form triplets".into(),
        ));
    }
    let mut head = EmbeddingHead::init(din, dout, cfg.seed);
    let initial_loss = mean_triplet_loss(&head, descriptors, &triplets, cfg.margin)?;
    let mut best = (initial_loss, head.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut vel_w = vec![0.0; head.weights.len()];
    let mut vel_b = vec![0.0; head.bias.len()];
    let mut loss_history = Vec::with_capacity(cfg.iterations);
    let mut learning_rates = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let lr = cfg.learning_rate_at(iteration);
        let batch: Vec<Triplet> = if triplets.len() <= FULL_BATCH_LIMIT {
            triplets.clone()
        } else {
            triplets.choose_multiple(&mut rng, MINI_BATCH).copied().collect()
        };
        let g = batch_gradient(&head, descriptors, &batch, cfg.margin)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                loss: g.loss,
            });
        }
        for ((p, v), gi) in head.weights.iter_mut().zip(&mut vel_w).zip(&g.weights) {
            *v = cfg.momentum * *v + gi;
            *p -= lr * *v;
        }
        for ((p, v), gi) in head.bias.iter_mut().zip(&mut vel_b).zip(&g.bias) {
            *v = cfg.momentum * *v + gi;
            *p -= lr * *v;
        }
        let loss = mean_triplet_loss(&head, descriptors, &triplets, cfg.margin);
        let loss = match loss {
            Ok(l) if l.is_finite() && head.weights.iter().all(|w| w.is_finite()) => l,
            Ok(l) => return Err(Error::Divergence { iteration, loss: l }),
            Err(_) => {
                return Err(Error::Divergence {
                    iteration,
                    loss: f64::NAN,
                })
            }
        };
        learning_rates.push(lr);
        loss_history.push(loss);
        if loss < best.0 {
            best = (loss, head.clone());
        }
    }

    Ok(TrainReport {
        head: best.1,
        triplet_count: triplets.len(),
        updates: cfg.iterations,
        initial_loss,
        final_loss: best.0,
        loss_history,
        learning_rates,
    })
}
