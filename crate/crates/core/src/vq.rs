//! k-means codebook training and nearest-centroid quantization.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::rng::SplitMix64;

pub const MAX_KMEANS_ITERS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum VqError {
    #[error("need at least {k} training rows, got {got}")]
    TooFewPoints { k: usize, got: usize },
    #[error("codebook size must be at least 1")]
    EmptyCodebook,
    #[error("feature dimension {got} does not match codebook dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("codebook contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// k × dim
    pub centroids: Array2<f64>,
    pub training_distortion: f64,
}

/// Discrete observation string over a codebook's alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolSequence(pub Vec<usize>);

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for SymbolSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row in row-major `centroids`, lowest index on ties.
fn nearest_flat(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn row_vec(x: ArrayView1<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

impl Codebook {
    pub fn from_centroids(centroids: Array2<f64>) -> Result<Self, VqError> {
        if centroids.nrows() == 0 {
            return Err(VqError::EmptyCodebook);
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(VqError::NonFinite);
        }
        Ok(Self { centroids: centroids.as_standard_layout().into_owned(), training_distortion: 0.0 })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn nearest(&self, x: ArrayView1<f64>) -> usize {
        let c = self.centroids.as_slice().expect("centroids are row-major");
        match x.as_slice() {
            Some(x) => nearest_flat(c, self.dim(), x).0,
            None => nearest_flat(c, self.dim(), &row_vec(x)).0,
        }
    }

    /// Maps each row of `frames` to its nearest centroid.
    pub fn quantize_rows(&self, frames: ArrayView2<f64>) -> Result<SymbolSequence, VqError> {
        if frames.ncols() != self.dim() {
            return Err(VqError::DimensionMismatch { expected: self.dim(), got: frames.ncols() });
        }
        Ok(SymbolSequence(frames.outer_iter().map(|row| self.nearest(row)).collect()))
    }
}

pub fn quantize(cb: &Codebook, fm: &FeatureMatrix) -> Result<SymbolSequence, VqError> {
    cb.quantize_rows(fm.frames.view())
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen centre.
fn seed_centroids(data: ArrayView2<f64>, k: usize, rng: &mut SplitMix64) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.below(n);
    centroids.row_mut(0).assign(&data.row(first));
    let dim = data.ncols();
    let rows = data.as_slice().expect("row-major training data");
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let pick = rng.categorical(d2.iter().copied()).unwrap_or_else(|| rng.below(n));
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }
    centroids
}

/// Trains a codebook and also returns the distortion after every
/// assignment step (first entry is the seeding distortion).
pub fn train_codebook_traced(
    data: ArrayView2<f64>,
    k: usize,
    seed: u64,
) -> Result<(Codebook, Vec<f64>), VqError> {
    if k == 0 {
        return Err(VqError::EmptyCodebook);
    }
    let n = data.nrows();
    if n < k {
        return Err(VqError::TooFewPoints { k, got: n });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(VqError::NonFinite);
    }
    let data = data.as_standard_layout();
    let data = data.view();
    let dim = data.ncols();
    let rows = data.as_slice().expect("standard layout");
    let mut rng = SplitMix64::new(seed);
    let mut centroids = seed_centroids(data, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();

    for iter in 0..=MAX_KMEANS_ITERS {
        let nearest_all: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let c = centroids.as_slice().expect("row-major centroids");
                nearest_flat(c, dim, &rows[i * dim..(i + 1) * dim])
            })
            .collect();
        let mut changed = false;
        for (i, (c, d)) in nearest_all.into_iter().enumerate() {
            changed |= assign[i] != c;
            assign[i] = c;
            dists[i] = d;
        }
        let distortion = dists.iter().sum::<f64>() / n as f64;
        if let Some(&prev) = history.last() {
            debug_assert!(
                distortion <= prev * (1.0 + 1e-12) + 1e-300,
                "k-means distortion rose from {prev} to {distortion}"
            );
        }
        history.push(distortion);
        if !changed || iter == MAX_KMEANS_ITERS {
            break;
        }

        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, x) in data.outer_iter().enumerate() {
            sums.row_mut(assign[i]).scaled_add(1.0, &x);
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            } else {
                // Re-seed an empty cluster at the point farthest from its
                // current centroid; that point then sits at distance zero.
                let (far, _) = dists.iter().enumerate().fold((0, -1.0), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
                centroids.row_mut(c).assign(&data.row(far));
                dists[far] = 0.0;
            }
        }
    }

    let training_distortion = *history.last().expect("at least one pass");
    Ok((Codebook { centroids, training_distortion }, history))
}

pub fn train_codebook(data: ArrayView2<f64>, k: usize, seed: u64) -> Result<Codebook, VqError> {
    train_codebook_traced(data, k, seed).map(|(cb, _)| cb)
}

/// Stacks the rows of several feature matrices.
pub fn pool_frames<'a>(mats: impl IntoIterator<Item = &'a FeatureMatrix>) -> Array2<f64> {
    let views: Vec<_> = mats.into_iter().map(|m| m.frames.view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::concatenate(Axis(0), &views).expect("uniform feature dimension")
}
