//! The external memory bank.
//!
//! A [`MemoryBank`] stores one unit-norm snippet per training sample. A
//! [`DecomposedBank`] stores the same information as `M ≈ C Bᵀ + μ` with
//! `C = U Σ^{1/2}` (per-snippet coefficients) and `B = V Σ^{1/2}` (shared
//! basis), which cuts storage from `N·d` to `N·r + d·r` and makes new
//! snippets cheap to add: project an outside feature onto the basis, or mix
//! two coefficient rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

/// Singular values at or below this cannot be divided by during projection.
pub const MIN_SINGULAR: f64 = 1e-12;

/// `v / ‖v‖`, rejecting vectors with norm below `1e-12`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = linalg::norm(v);
    if n.is_nan() || n < FeatureSet::MIN_NORM {
        return Err(Error::ZeroNorm(0));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `N` unit-norm snippets of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    snippets: Matrix,
    encoder_seed: u64,
}

impl MemoryBank {
    /// Unit-norm tolerance checked on construction and load.
    pub const NORM_TOL: f64 = 1e-9;

    /// Normalizes every feature row; order is preserved.
    pub fn build(features: &FeatureSet, encoder_seed: u64) -> Result<Self> {
        let m = features.features();
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for (i, row) in m.row_iter().enumerate() {
            data.extend(normalize(row).map_err(|_| Error::ZeroNorm(i))?);
        }
        Ok(Self {
            snippets: Matrix::new(m.rows(), m.cols(), data)?,
            encoder_seed,
        })
    }

    /// Wraps already-normalized snippets, checking the unit-norm invariant.
    pub fn from_snippets(snippets: Matrix, encoder_seed: u64) -> Result<Self> {
        for (i, row) in snippets.row_iter().enumerate() {
            if (linalg::norm(row) - 1.0).abs() > Self::NORM_TOL {
                return Err(Error::NotUnitNorm(i));
            }
        }
        Ok(Self {
            snippets,
            encoder_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.snippets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.snippets.cols()
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder_seed
    }

    pub fn snippets(&self) -> &Matrix {
        &self.snippets
    }

    pub fn snippet(&self, i: usize) -> Result<&[f64]> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.snippets.row(i))
    }

    /// Bank restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend_from_slice(self.snippet(i)?);
        }
        Ok(Self {
            snippets: Matrix::new(indices.len(), self.dim(), data)?,
            encoder_seed: self.encoder_seed,
        })
    }

    pub fn payload_bytes(&self) -> usize {
        self.len() * self.dim() * 8
    }
}

/// Low-rank factorization `M ≈ C Bᵀ + μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedBank {
    mean: Vec<f64>,
    singular: Vec<f64>,
    basis: Matrix,
    coeffs: Matrix,
    encoder_seed: u64,
}

impl DecomposedBank {
    /// Center the snippets, take a rank-`r` SVD of the centered matrix and
    /// split `Σ` evenly between the two factors.
    ///
    /// Coefficient rows are computed as `(s_i − μ) B / S`, the same
    /// arithmetic as [`project_external`](Self::project_external), so
    /// projecting an in-bank snippet reproduces its stored row exactly.
    /// Mathematically this equals `U Σ^{1/2}`.
    pub fn decompose(bank: &MemoryBank, rank: usize) -> Result<Self> {
        let (n, d) = (bank.len(), bank.dim());
        let max = n.min(d);
        if rank == 0 || rank > max {
            return Err(Error::RankOutOfRange { rank, max });
        }
        let m = bank.snippets();
        let mut mean = vec![0.0; d];
        for row in m.row_iter() {
            linalg::axpy(1.0, row, &mut mean);
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);

        let centered = Matrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let svd = linalg::svd(&centered, rank)?;
        let roots: Vec<f64> = svd.s.iter().map(|s| libm::sqrt(*s)).collect();
        let basis = Matrix::from_fn(d, rank, |i, j| svd.v[(i, j)] * roots[j]);

        let mut out = Self {
            mean,
            singular: svd.s,
            basis,
            coeffs: Matrix::zeros(0, rank),
            encoder_seed: bank.encoder_seed(),
        };
        for row in m.row_iter() {
            let c = out.coefficients_of(row);
            out.coeffs.push_row(&c)?;
        }
        Ok(out)
    }

    /// Assemble from stored parts (used when loading from disk).
    pub fn from_parts(
        mean: Vec<f64>,
        singular: Vec<f64>,
        basis: Matrix,
        coeffs: Matrix,
        encoder_seed: u64,
    ) -> Result<Self> {
        let (d, r) = (mean.len(), singular.len());
        if basis.rows() != d || basis.cols() != r {
            return Err(Error::DimensionMismatch {
                expected: d * r,
                got: basis.rows() * basis.cols(),
            });
        }
        if coeffs.cols() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: coeffs.cols(),
            });
        }
        if mean.iter().chain(&singular).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decomposed bank"));
        }
        if singular.iter().any(|&s| s < 0.0) || singular.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "singular values must be non-negative and descending".into(),
            ));
        }
        Ok(Self {
            mean,
            singular,
            basis,
            coeffs,
            encoder_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder_seed
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn coeffs(&self) -> &Matrix {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> Result<&[f64]> {
        self.check_index(i)?;
        Ok(self.coeffs.row(i))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// `(f − μ) B / S`, with zero for directions whose singular value is zero.
    fn coefficients_of(&self, feature: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = feature.iter().zip(&self.mean).map(|(f, m)| f - m).collect();
        let mut c = vec![0.0; self.rank()];
        for (k, &x) in centered.iter().enumerate() {
            linalg::axpy(x, self.basis.row(k), &mut c);
        }
        for (cj, &s) in c.iter_mut().zip(&self.singular) {
            *cj = if s > MIN_SINGULAR { *cj / s } else { 0.0 };
        }
        c
    }

    /// `c Bᵀ + μ` for an arbitrary coefficient vector.
    pub fn decode(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: c.len(),
            });
        }
        Ok(self
            .basis
            .row_iter()
            .zip(&self.mean)
            .map(|(b, m)| linalg::dot(c, b) + m)
            .collect())
    }

    /// Snippet `i` as `c_i Bᵀ + μ`.
    pub fn reconstruct(&self, i: usize) -> Result<Vec<f64>> {
        self.check_index(i)?;
        self.decode(self.coeffs.row(i))
    }

    /// Coefficients of an outside feature: `(f − μ) B / S`. Fails if any
    /// retained singular value is zero, since those directions carry no
    /// information to divide by.
    pub fn project_external(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: feature.len(),
            });
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("external feature"));
        }
        if let Some(index) = self.singular.iter().position(|&s| s <= MIN_SINGULAR) {
            return Err(Error::ZeroSingularValue { index });
        }
        Ok(self.coefficients_of(feature))
    }

    /// Append a coefficient row; returns its index. `B`, `μ` and `S` are untouched.
    pub fn append_coeff(&mut self, c: &[f64]) -> Result<usize> {
        if c.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: c.len(),
            });
        }
        self.coeffs.push_row(c)?;
        Ok(self.len() - 1)
    }

    /// `α c_i + (1 − α) c_j`, no renormalization.
    pub fn interpolate(&self, i: usize, j: usize, alpha: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: alpha,
            });
        }
        let (ci, cj) = (self.coeff(i)?, self.coeff(j)?);
        Ok(ci
            .iter()
            .zip(cj)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect())
    }

    /// Bytes of the float payload: `(N·r + d·r + d + r) · 8`.
    pub fn payload_bytes(&self) -> usize {
        let (n, d, r) = (self.len(), self.dim(), self.rank());
        (n * r + d * r + d + r) * 8
    }
}

/// Either storage mode of the bank.
#[derive(Debug, Clone, PartialEq)]
pub enum Bank {
    Full(MemoryBank),
    Decomposed(DecomposedBank),
}

impl Bank {
    pub fn len(&self) -> usize {
        match self {
            Bank::Full(b) => b.len(),
            Bank::Decomposed(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Bank::Full(b) => b.dim(),
            Bank::Decomposed(b) => b.dim(),
        }
    }

    pub fn encoder_seed(&self) -> u64 {
        match self {
            Bank::Full(b) => b.encoder_seed(),
            Bank::Decomposed(b) => b.encoder_seed(),
        }
    }

    /// Snippet `i`; reconstructed when the bank is decomposed.
    pub fn snippet(&self, i: usize) -> Result<Vec<f64>> {
        match self {
            Bank::Full(b) => b.snippet(i).map(<[f64]>::to_vec),
            Bank::Decomposed(b) => b.reconstruct(i),
        }
    }

    pub fn payload_bytes(&self) -> usize {
        match self {
            Bank::Full(b) => b.payload_bytes(),
            Bank::Decomposed(b) => b.payload_bytes(),
        }
    }
}

impl From<MemoryBank> for Bank {
    fn from(b: MemoryBank) -> Self {
        Bank::Full(b)
    }
}

impl From<DecomposedBank> for Bank {
    fn from(b: DecomposedBank) -> Self {
        Bank::Decomposed(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskStrategy {
    /// Zero a random subset of coordinates in every snippet.
    #[default]
    Zero,
    /// Replace a random subset of the batch's snippets with Gaussian noise.
    Random,
    /// Add Gaussian noise with std `ratio` to every coordinate.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub ratio: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::Zero,
            ratio: 0.4,
        }
    }
}

impl MaskSpec {
    pub fn new(strategy: MaskStrategy, ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::OutOfRange {
                name: "mask ratio",
                value: ratio,
            });
        }
        Ok(Self { strategy, ratio })
    }

    pub fn none() -> Self {
        Self {
            strategy: MaskStrategy::Zero,
            ratio: 0.0,
        }
    }
}

/// `floor(ratio · n)`, guarded against products like `0.29 · 100`
/// landing just under an integer.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    let k = libm::floor(ratio * n as f64 + 1e-9) as usize;
    k.min(n)
}

/// Corrupt a batch of snippets (one per row) in place. Masked snippets are
/// not renormalized.
pub fn apply_mask(batch: &mut Matrix, mask: &MaskSpec, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&mask.ratio) {
        return Err(Error::OutOfRange {
            name: "mask ratio",
            value: mask.ratio,
        });
    }
    let (b, d) = (batch.rows(), batch.cols());
    match mask.strategy {
        MaskStrategy::Zero => {
            let k = mask_count(mask.ratio, d);
            if k == 0 {
                return Ok(());
            }
            for i in 0..b {
                let row = batch.row_mut(i);
                for j in rng.sample_indices(d, k) {
                    row[j] = 0.0;
                }
            }
        }
        MaskStrategy::Random => {
            let k = mask_count(mask.ratio, b);
            for i in rng.sample_indices(b, k) {
                rng.fill_normal(batch.row_mut(i));
            }
        }
        MaskStrategy::Noise => {
            if mask.ratio == 0.0 {
                return Ok(());
            }
            for i in 0..b {
                for v in batch.row_mut(i) {
                    *v += mask.ratio * rng.normal();
                }
            }
        }
    }
    Ok(())
}
