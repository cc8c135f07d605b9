//! Dense real linear algebra: a row-major matrix, cyclic Jacobi symmetric
//! eigendecomposition, truncated SVD through the smaller Gram matrix, and
//! the PSD square root used by the Fréchet distance.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Absolute symmetry tolerance, scaled by `max(1, max |a_ij|)`.
const SYMMETRY_TOL: f64 = 1e-10;
/// Jacobi stops once the off-diagonal Frobenius norm drops below this
/// fraction of the input norm.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Singular values below this fraction of the largest are treated as zero.
const SINGULAR_CLAMP: f64 = 1e-12;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible while still vectorizing well.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Validated constructor: `data.len() == rows * cols` and all entries finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix row"));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Entry-wise difference `self - other`.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn check_square(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: self.cols,
            });
        }
        Ok(())
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Truncated singular value decomposition `A ≈ U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `rows × rank`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `cols × rank`, orthonormal columns; the largest-magnitude entry of each
    /// column is non-negative.
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let (n, d, r) = (self.u.rows(), self.v.rows(), self.s.len());
        Matrix::from_fn(n, d, |i, j| {
            (0..r).map(|k| self.u[(i, k)] * self.s[k] * self.v[(j, k)]).sum()
        })
    }
}

/// Symmetric eigendecomposition: eigenvalues descending, eigenvectors as
/// orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    a.check_square()?;
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let dev = a.asymmetry();
    if dev > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(dev));
    }
    Ok(())
}

/// Flip column `j` of `m` (and of `partner`, if given) so that its
/// largest-magnitude entry is non-negative. Ties resolve to the lowest index.
fn fix_column_sign(m: &mut Matrix, j: usize, partner: Option<&mut Matrix>) {
    let mut best = 0;
    let mut best_abs = -1.0;
    for i in 0..m.rows {
        let a = m[(i, j)].abs();
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    if m[(best, j)] < 0.0 {
        for i in 0..m.rows {
            m[(i, j)] = -m[(i, j)];
        }
        if let Some(p) = partner {
            for i in 0..p.rows {
                p[(i, j)] = -p[(i, j)];
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    check_symmetric(a)?;
    let n = a.rows;
    let mut w = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = w.frobenius_norm();
    let off_norm = |w: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += w[(i, j)] * w[(i, j)];
                }
            }
        }
        libm::sqrt(s)
    };

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&w) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = {
                    let t = 1.0 / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = w[(k, p)];
                    let akq = w[(k, q)];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    w[(k, p)] = np;
                    w[(p, k)] = np;
                    w[(k, q)] = nq;
                    w[(q, k)] = nq;
                }
                w[(p, p)] -= t * apq;
                w[(q, q)] += t * apq;
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    for j in 0..n {
        fix_column_sign(&mut vectors, j, None);
    }
    Ok(SymEigen { values, vectors })
}

/// Replace columns `fill` of `m` (whose other columns are orthonormal) by
/// unit vectors completing the orthonormal set. Each new column is the
/// canonical basis vector with the largest residual after projecting out the
/// current set (lowest index on ties), so the result is deterministic.
fn complete_orthonormal(m: &mut Matrix, fill: &[usize]) {
    let n = m.rows;
    let mut basis: Vec<usize> = (0..m.cols).filter(|j| !fill.contains(j)).collect();
    for &j in fill {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for candidate in 0..n {
            let mut x = vec![0.0; n];
            x[candidate] = 1.0;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for &b in &basis {
                    let proj: f64 = (0..n).map(|i| x[i] * m[(i, b)]).sum();
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi -= proj * m[(i, b)];
                    }
                }
            }
            let nx = norm(&x);
            if best.as_ref().is_none_or(|(bn, _)| nx > *bn) {
                best = Some((nx, x));
            }
        }
        let (nx, x) = best.expect("completion needs a nonempty column");
        for (i, xi) in x.iter().enumerate() {
            m[(i, j)] = xi / nx;
        }
        basis.push(j);
    }
}

/// Best rank-`rank` approximation of `a` in Frobenius norm.
///
/// Eigendecomposes the smaller Gram matrix (`AᵀA` when `rows ≥ cols`,
/// otherwise `AAᵀ`) and recovers the other factor by projection; each
/// singular value is the norm of its projected column. Singular values below
/// `1e-12 · s_max`, and columns that are numerically dependent on larger
/// ones, are set to zero and filled by a deterministic orthonormal
/// completion.
pub fn svd(a: &Matrix, rank: usize) -> Result<Svd> {
    let (n, d) = (a.rows, a.cols);
    let k = n.min(d);
    if rank == 0 || rank > k {
        return Err(Error::RankOutOfRange { rank, max: k });
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }

    let tall = n >= d;
    // Columns of the short side as contiguous rows.
    let short = if tall { a.transpose() } else { a.clone() };
    let long_dim = if tall { n } else { d };
    let gram = Matrix::from_fn(k, k, |i, j| dot(short.row(i), short.row(j)));
    let eig = sym_eigen(&gram)?;

    // Project each eigenvector to the long side. The norm of the projection
    // is the singular value; it keeps full relative accuracy where
    // √eigenvalue loses half the digits.
    let known = eig.vectors;
    let mut cols: Vec<(f64, Vec<f64>)> = (0..k)
        .map(|j| {
            let mut col = vec![0.0; long_dim];
            for i in 0..k {
                let w = known[(i, j)];
                if w != 0.0 {
                    axpy(w, short.row(i), &mut col);
                }
            }
            (norm(&col), col)
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| cols[j].0.total_cmp(&cols[i].0).then(i.cmp(&j)));
    let known = Matrix::from_fn(k, k, |i, j| known[(i, order[j])]);
    let mut s: Vec<f64> = order.iter().map(|&j| cols[j].0).collect();
    let s_max = s[0];

    let mut other = Matrix::zeros(long_dim, k);
    let mut dead = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    for (j, &src) in order.iter().enumerate() {
        if s[j] <= SINGULAR_CLAMP * s_max {
            s[j] = 0.0;
            dead.push(j);
            continue;
        }
        let col = &mut cols[src].1;
        let before = s[j];
        // Two passes of Gram-Schmidt against the columns already accepted.
        for _ in 0..2 {
            for &b in &live {
                let proj: f64 = (0..long_dim).map(|r| col[r] * other[(r, b)]).sum();
                for (r, c) in col.iter_mut().enumerate() {
                    *c -= proj * other[(r, b)];
                }
            }
        }
        let after = norm(col);
        if after < 1e-3 * before {
            s[j] = 0.0;
            dead.push(j);
            continue;
        }
        for (r, c) in col.iter().enumerate() {
            other[(r, j)] = c / after;
        }
        live.push(j);
    }
    complete_orthonormal(&mut other, &dead);

    let (mut u, mut v) = if tall { (other, known) } else { (known, other) };
    for j in 0..k {
        fix_column_sign(&mut v, j, Some(&mut u));
    }

    let take = |m: &Matrix| Matrix::from_fn(m.rows, rank, |i, j| m[(i, j)]);
    Ok(Svd {
        u: take(&u),
        s: s[..rank].to_vec(),
        v: take(&v),
    })
}

/// Symmetric PSD square root `R` with `R·R = A`. Eigenvalues down to
/// `-1e-10 · max(1, λ_max)` are clamped to zero; anything more negative is
/// rejected.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(a)?;
    let n = a.rows;
    let floor = -NEGATIVE_EIGEN_TOL * eig.values.first().copied().unwrap_or(0.0).abs().max(1.0);
    let mut roots = Vec::with_capacity(n);
    for &l in &eig.values {
        if l < floor {
            return Err(Error::NotPositiveSemidefinite(l));
        }
        roots.push(libm::sqrt(l.max(0.0)));
    }
    let q = &eig.vectors;
    let mut r = Matrix::from_fn(n, n, |i, j| (0..n).map(|k| q[(i, k)] * roots[k] * q[(j, k)]).sum());
    // Exact symmetry.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = m;
            r[(j, i)] = m;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn orthonormality_residual(m: &Matrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        g.sub(&Matrix::identity(m.cols())).unwrap().max_abs()
    }

    #[test]
    fn completion_when_one_direction_remains() {
        // Rank 1 in 12 dimensions: eleven columns come from the completion.
        let u: Vec<f64> = (0..12).map(|i| (i as f64 + 1.0).sqrt()).collect();
        let a = Matrix::from_fn(12, 12, |i, j| u[i] * u[j]);
        let f = svd(&a, 12).unwrap();
        assert!(orthonormality_residual(&f.u) < 1e-12, "{}", orthonormality_residual(&f.u));
        assert!(orthonormality_residual(&f.v) < 1e-12);
        assert!(f.reconstruct().sub(&a).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn matrix_rejects_bad_shapes_and_nan() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn svd_rank_one_analytic() {
        let a = Matrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]]).unwrap();
        let r = svd(&a, 1).unwrap();
        assert!((r.s[0] - 1.0).abs() < 1e-12);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((r.v[(0, 0)] - h).abs() < 1e-12);
        assert!((r.v[(1, 0)] + h).abs() < 1e-12);
    }

    #[test]
    fn svd_identity() {
        let r = svd(&Matrix::identity(3), 3).unwrap();
        for s in &r.s {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let a = random(20, 8, 3);
        let r = svd(&a, 8).unwrap();
        let err = a.sub(&r.reconstruct()).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-10, "{err}");
        assert!(orthonormality_residual(&r.u) <= 1e-10);
        assert!(orthonormality_residual(&r.v) <= 1e-10);
    }

    #[test]
    fn svd_wide_matrix_and_sign_convention() {
        let a = random(5, 12, 9);
        let r = svd(&a, 5).unwrap();
        let err = a.sub(&r.reconstruct()).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-10);
        for j in 0..5 {
            let col = r.v.column(j);
            let big = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big >= 0.0);
        }
        assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_rank_deficient_completes_basis() {
        // Rank 1 matrix asked for rank 3.
        let a = Matrix::from_fn(6, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
        let r = svd(&a, 3).unwrap();
        assert_eq!(r.s[1], 0.0);
        assert_eq!(r.s[2], 0.0);
        assert!(orthonormality_residual(&r.u) <= 1e-10);
        assert!(orthonormality_residual(&r.v) <= 1e-10);
    }

    #[test]
    fn svd_zero_matrix() {
        let r = svd(&Matrix::zeros(4, 3), 3).unwrap();
        assert!(r.s.iter().all(|&s| s == 0.0));
        assert!(orthonormality_residual(&r.u) <= 1e-12);
    }

    #[test]
    fn svd_rank_errors() {
        let a = random(4, 3, 1);
        assert!(matches!(svd(&a, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(svd(&a, 4), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn svd_is_deterministic() {
        let a = random(30, 7, 5);
        assert_eq!(svd(&a, 4).unwrap(), svd(&a, 4).unwrap());
    }

    #[test]
    fn eigen_diagonal_and_2x2() {
        let e = sym_eigen(&Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        let e = sym_eigen(&Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_random_residual() {
        let b = random(6, 6, 21);
        let a = Matrix::from_fn(6, 6, |i, j| b[(i, j)] + b[(j, i)]);
        let e = sym_eigen(&a).unwrap();
        for j in 0..6 {
            let v = e.vectors.column(j);
            for i in 0..6 {
                let av: f64 = (0..6).map(|k| a[(i, k)] * v[k]).sum();
                assert!((av - e.values[j] * v[i]).abs() <= 1e-9);
            }
        }
        assert!(orthonormality_residual(&e.vectors) <= 1e-12);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn psd_sqrt_cases() {
        let r = psd_sqrt(&Matrix::identity(3)).unwrap();
        assert!(r.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-15);
        let r = psd_sqrt(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(r.sub(&Matrix::from_diag(&[2.0, 3.0])).unwrap().max_abs() < 1e-14);

        let b = random(5, 5, 4);
        let a = b.transpose().matmul(&b).unwrap();
        let r = psd_sqrt(&a).unwrap();
        let rr = r.matmul(&r).unwrap();
        assert!(rr.sub(&a).unwrap().frobenius_norm() <= 1e-8);
        assert_eq!(r.asymmetry(), 0.0);
    }

    #[test]
    fn psd_sqrt_rejects_negative() {
        assert!(matches!(
            psd_sqrt(&Matrix::from_diag(&[1.0, -0.5])),
            Err(Error::NotPositiveSemidefinite(_))
        ));
        // Tiny negative eigenvalues are clamped.
        assert!(psd_sqrt(&Matrix::from_diag(&[1.0, -1e-13])).is_ok());
    }
}
