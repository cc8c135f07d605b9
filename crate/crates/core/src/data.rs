//! Synthetic data: Gaussian-mixture training distributions, a frozen
//! random-feature encoder standing in for a pretrained representation
//! model, and feature sets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

/// Isotropic Gaussian mixture `Σ_k w_k N(μ_k, γ² I)`.
///
/// `γ = 0` is allowed and gives a mixture of point masses; the closed-form
/// oracles rely on that limit.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    means: Matrix,
    std: f64,
    weights: Vec<f64>,
}

impl GmmSpec {
    pub fn new(means: Matrix, std: f64, weights: Vec<f64>) -> Result<Self> {
        if means.rows() == 0 || means.cols() == 0 {
            return Err(Error::Empty("mixture means"));
        }
        if weights.len() != means.rows() {
            return Err(Error::DimensionMismatch {
                expected: means.rows(),
                got: weights.len(),
            });
        }
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::OutOfRange {
                name: "component std",
                value: std,
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::OutOfRange {
                name: "mixture weight",
                value: w,
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { means, std, weights })
    }

    /// `k` equal-weight modes evenly spaced on a circle of `radius` in 2-D.
    pub fn ring(k: usize, radius: f64, std: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("mixture means"));
        }
        let means = Matrix::from_fn(k, 2, |i, j| {
            let a = 2.0 * PI * i as f64 / k as f64;
            radius * if j == 0 { libm::cos(a) } else { libm::sin(a) }
        });
        Self::new(means, std, vec![1.0 / k as f64; k])
    }

    /// Eight unit-circle modes with `γ = 0.05`.
    pub fn default_ring() -> Self {
        Self::ring(8, 1.0, 0.05).expect("default mixture is valid")
    }

    pub fn single(mean: &[f64], std: f64) -> Result<Self> {
        Self::new(Matrix::from_rows(&[mean])?, std, vec![1.0])
    }

    /// Mode `k` as a one-component mixture.
    pub fn component(&self, k: usize) -> Result<Self> {
        if k >= self.modes() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.modes(),
            });
        }
        Self::single(self.means.row(k), self.std)
    }

    pub fn modes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.means.row(k)
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the mean closest to `x` (lowest index on ties).
    pub fn nearest_mode(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, m) in self.means.row_iter().enumerate() {
            let d = linalg::sq_dist(x, m);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Smallest pairwise distance between means (`inf` for one mode).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.modes() {
            for j in (i + 1)..self.modes() {
                best = best.min(libm::sqrt(linalg::sq_dist(self.mean(i), self.mean(j))));
            }
        }
        best
    }
}

/// Draws from a mixture along with the component each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSamples {
    pub points: Matrix,
    pub labels: Vec<usize>,
}

/// `n` i.i.d. draws: component `k ∝ w_k`, then `μ_k + γ·z`.
pub fn gen_gmm(spec: &GmmSpec, n: usize, seed: u64) -> Result<GmmSamples> {
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut rng = Rng::new(seed);
    let dim = spec.dim();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = spec.modes() - 1;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        labels.push(k);
        for &m in spec.mean(k) {
            data.push(m + spec.std * rng.normal());
        }
    }
    Ok(GmmSamples {
        points: Matrix::new(n, dim, data)?,
        labels,
    })
}

/// Anything that turns a data point into a feature vector.
pub trait FeatureMap {
    fn input_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn encode_all(&self, points: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(points.rows() * self.feature_dim());
        for x in points.row_iter() {
            data.extend(self.encode(x)?);
        }
        Matrix::new(points.rows(), self.feature_dim(), data)
    }
}

/// Passes points through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl FeatureMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.0
    }

    fn feature_dim(&self) -> usize {
        self.0
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.0, x.len())?;
        Ok(x.to_vec())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Frozen two-layer random-feature encoder:
/// `x ↦ normalize(W2 · tanh(W1·x + b1) + b2)`.
///
/// All weights and biases are drawn from `N(0, 1/fan_in)` by a generator
/// seeded with `seed`, so the encoder is a pure function of
/// `(seed, input_dim, hidden_dim, feature_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    seed: u64,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

impl ToyEncoder {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_FEATURES: usize = 32;

    pub fn new(seed: u64, input_dim: usize, hidden_dim: usize, feature_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidConfig("encoder dimensions must be positive".into()));
        }
        let mut rng = Rng::new(seed);
        let s1 = libm::sqrt(1.0 / input_dim as f64);
        let s2 = libm::sqrt(1.0 / hidden_dim as f64);
        let w1 = Matrix::from_fn(hidden_dim, input_dim, |_, _| s1 * rng.normal());
        let b1 = (0..hidden_dim).map(|_| s1 * rng.normal()).collect();
        let w2 = Matrix::from_fn(feature_dim, hidden_dim, |_, _| s2 * rng.normal());
        let b2 = (0..feature_dim).map(|_| s2 * rng.normal()).collect();
        Ok(Self { seed, w1, b1, w2, b2 })
    }

    pub fn with_defaults(seed: u64, input_dim: usize) -> Result<Self> {
        Self::new(seed, input_dim, Self::DEFAULT_HIDDEN, Self::DEFAULT_FEATURES)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }
}

impl FeatureMap for ToyEncoder {
    fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    fn feature_dim(&self) -> usize {
        self.w2.rows()
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        let h: Vec<f64> = self
            .w1
            .row_iter()
            .zip(&self.b1)
            .map(|(w, b)| libm::tanh(linalg::dot(w, x) + b))
            .collect();
        let mut out: Vec<f64> = self
            .w2
            .row_iter()
            .zip(&self.b2)
            .map(|(w, b)| linalg::dot(w, &h) + b)
            .collect();
        let n = linalg::norm(&out);
        if n < 1e-12 {
            return Err(Error::Degenerate("encoder output has zero norm"));
        }
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }
}

/// Encoder features of a dataset, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Matrix,
}

impl FeatureSet {
    pub const MIN_NORM: f64 = 1e-12;

    pub fn new(features: Matrix) -> Result<Self> {
        for (i, row) in features.row_iter().enumerate() {
            if linalg::norm(row) < Self::MIN_NORM {
                return Err(Error::ZeroNorm(i));
            }
        }
        Ok(Self { features })
    }

    pub fn encode(enc: &impl FeatureMap, points: &Matrix) -> Result<Self> {
        Self::new(enc.encode_all(points)?)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn into_matrix(self) -> Matrix {
        self.features
    }
}
