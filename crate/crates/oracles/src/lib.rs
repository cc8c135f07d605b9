//! Brute-force reference computations for the test suites.
//!
//! Nothing here depends on `gmem-core`; every routine is a separate,
//! deliberately plain implementation so production code is never checked
//! against itself. Matrices are row-major `&[f64]` with explicit shapes.

use std::fmt;

/// Outcome of comparing a computed quantity with its oracle value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub check: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    /// Elementwise comparison. With `relative`, the pass test uses
    /// `|a − b| / max(|b|, floor)`; otherwise the absolute error.
    pub fn compare(check: &str, got: &[f64], expected: &[f64], threshold: f64, relative: bool, floor: f64) -> Self {
        let mut max_abs_err: f64 = if got.len() == expected.len() { 0.0 } else { f64::INFINITY };
        let mut max_rel_err: f64 = max_abs_err;
        for (a, b) in got.iter().zip(expected) {
            let e = (a - b).abs();
            let e = if e.is_nan() { f64::INFINITY } else { e };
            max_abs_err = max_abs_err.max(e);
            max_rel_err = max_rel_err.max(e / b.abs().max(floor));
        }
        let err = if relative { max_rel_err } else { max_abs_err };
        Self {
            check: check.to_string(),
            max_abs_err,
            max_rel_err,
            threshold,
            relative,
            pass: err <= threshold,
        }
    }

    /// Vector-level comparison: relative error is `‖a − b‖ / max(‖b‖, floor)`.
    pub fn compare_norm(check: &str, got: &[f64], expected: &[f64], threshold: f64, floor: f64) -> Self {
        let diff: f64 = got.iter().zip(expected).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = expected.iter().map(|b| b * b).sum::<f64>().sqrt();
        let mut rep = Self::compare(check, got, expected, threshold, true, 1.0);
        rep.max_rel_err = if got.len() == expected.len() { diff / scale.max(floor) } else { f64::INFINITY };
        rep.pass = rep.max_rel_err <= threshold;
        rep
    }

    pub fn scalar(check: &str, got: f64, expected: f64, threshold: f64, relative: bool) -> Self {
        Self::compare(check, &[got], &[expected], threshold, relative, f64::MIN_POSITIVE)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: abs {:.3e} rel {:.3e} ({} threshold {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.max_abs_err,
            self.max_rel_err,
            if self.relative { "relative" } else { "absolute" },
            self.threshold
        )
    }
}

/// Singular values (descending) and right singular vectors of an
/// `rows × cols` matrix, from the eigendecomposition of `AᵀA`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    /// `cols × cols`, column `k` pairs with `singular_values[k]`.
    pub v: Vec<f64>,
}

/// Classical (largest off-diagonal pivot) Jacobi on `AᵀA`.
pub fn gram_svd_oracle(a: &[f64], rows: usize, cols: usize) -> SvdResult {
    assert_eq!(a.len(), rows * cols);
    let n = cols;
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for r in 0..rows {
                s += a[r * cols + i] * a[r * cols + j];
            }
            g[i * n + j] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..(200 * n * n + 10) {
        let (mut p, mut q, mut big) = (0, 0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if g[i * n + j].abs() > big {
                    big = g[i * n + j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if big <= 1e-300 || big <= 1e-17 * scale {
            break;
        }
        let theta = (g[q * n + q] - g[p * n + p]) / (2.0 * g[p * n + q]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let gkp = g[k * n + p];
            let gkq = g[k * n + q];
            g[k * n + p] = c * gkp - s * gkq;
            g[k * n + q] = s * gkp + c * gkq;
        }
        for k in 0..n {
            let gpk = g[p * n + k];
            let gqk = g[q * n + k];
            g[p * n + k] = c * gpk - s * gqk;
            g[q * n + k] = s * gpk + c * gqk;
        }
        for k in 0..n {
            let vkp = v[k * n + p];
            let vkq = v[k * n + q];
            v[k * n + p] = c * vkp - s * vkq;
            v[k * n + q] = s * vkp + c * vkq;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| g[j * n + j].total_cmp(&g[i * n + i]));
    let singular_values = order.iter().map(|&i| g[i * n + i].max(0.0).sqrt()).collect();
    let mut vs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vs[k * n + new] = v[k * n + old];
        }
    }
    SvdResult { singular_values, v: vs }
}

/// Central differences, one coordinate at a time.
pub fn fd_gradient(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], step: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Interpolation schedules, written out independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coeffs {
    Linear,
    Vp,
}

impl Coeffs {
    pub fn alpha(self, t: f64) -> f64 {
        match self {
            Coeffs::Linear => 1.0 - t,
            Coeffs::Vp => (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn sigma(self, t: f64) -> f64 {
        match self {
            Coeffs::Linear => t,
            Coeffs::Vp => (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }
}

/// Isotropic Gaussian mixture in plain vectors.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub std: f64,
}

impl Mixture {
    pub fn ring(k: usize, radius: f64, std: f64) -> Self {
        let means = (0..k)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self {
            means,
            weights: vec![1.0 / k as f64; k],
            std,
        }
    }

    /// `log p_t(x)` of `x_t = α_t x₀ + σ_t ε`.
    pub fn log_density(&self, x: &[f64], t: f64, c: Coeffs) -> f64 {
        let (a, s) = (c.alpha(t), c.sigma(t));
        let var = a * a * self.std * self.std + s * s;
        let d = x.len() as f64;
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| {
                let r2: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - a * mi).powi(2)).sum();
                w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * r2 / var
            })
            .collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
    }
}

/// Score `∇ log p_t(x)` by central differences of the log-density.
pub fn fd_score(mix: &Mixture, x: &[f64], t: f64, c: Coeffs, step: f64) -> Vec<f64> {
    fd_gradient(|y| mix.log_density(y, t, c), x, step)
}

/// High-resolution Heun integration of `dx/dt = v(x, t)` from 1 to `t_min`.
pub fn reference_trajectory(field: impl Fn(&[f64], f64) -> Vec<f64>, eps: &[f64], t_min: f64, steps: usize) -> Vec<f64> {
    let h = (t_min - 1.0) / steps as f64;
    let mut x = eps.to_vec();
    for k in 0..steps {
        let t0 = 1.0 + k as f64 * h;
        let t1 = if k + 1 == steps { t_min } else { 1.0 + (k + 1) as f64 * h };
        let dt = t1 - t0;
        let v0 = field(&x, t0);
        let pred: Vec<f64> = x.iter().zip(&v0).map(|(xi, vi)| xi + dt * vi).collect();
        let v1 = field(&pred, t1);
        for i in 0..x.len() {
            x[i] += 0.5 * dt * (v0[i] + v1[i]);
        }
    }
    x
}

/// SplitMix64, used only for shuffling in the permutation test.
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise distances, by sorting them.
pub fn brute_median_distance(points: &[&[f64]]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d.push(sq(points[i], points[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    0.5 * (d[(m - 1) / 2] + d[m / 2])
}

/// Unbiased MMD² from an explicit kernel matrix over the pooled points;
/// the first `m` belong to X.
fn mmd_from_kernel(k: &[f64], n: usize, idx: &[usize], m: usize) -> f64 {
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let v = k[idx[a] * n + idx[b]];
            match (a < m, b < m) {
                (true, true) => xx += v,
                (false, false) => yy += v,
                (true, false) => xy += v,
                _ => {}
            }
        }
    }
    let (mf, nf) = (m as f64, (n - m) as f64);
    xx / (mf * (mf - 1.0)) + yy / (nf * (nf - 1.0)) - 2.0 * xy / (mf * nf)
}

/// Unbiased RBF MMD² at bandwidth `h`, straight from the definition.
pub fn brute_mmd(x: &[&[f64]], y: &[&[f64]], h: f64) -> f64 {
    let pooled: Vec<&[f64]> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let k = kernel_matrix(&pooled, h);
    let idx: Vec<usize> = (0..n).collect();
    mmd_from_kernel(&k, n, &idx, x.len())
}

fn kernel_matrix(pooled: &[&[f64]], h: f64) -> Vec<f64> {
    let n = pooled.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = (-sq(pooled[i], pooled[j]) / (2.0 * h * h)).exp();
        }
    }
    k
}

/// MMD² statistics under random relabelling of the pooled sample.
pub fn permutation_null(x: &[&[f64]], y: &[&[f64]], h: f64, perms: usize, seed: u64) -> Vec<f64> {
    let pooled: Vec<&[f64]> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let k = kernel_matrix(&pooled, h);
    let mut rng = SplitMix::new(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    (0..perms)
        .map(|_| {
            for i in (1..n).rev() {
                let j = rng.below(i + 1);
                idx.swap(i, j);
            }
            mmd_from_kernel(&k, n, &idx, x.len())
        })
        .collect()
}

/// Empirical `q`-quantile by sorting.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = ((v.len() - 1) as f64 * q).round() as usize;
    v[pos]
}

/// Orthogonal projection of `f` onto the affine set `μ + span(columns of
/// B)`, via the normal equations solved by Gaussian elimination.
pub fn affine_projection(f: &[f64], mean: &[f64], basis: &[f64], d: usize, r: usize) -> Vec<f64> {
    assert_eq!(basis.len(), d * r);
    let centred: Vec<f64> = f.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut m = vec![0.0; r * (r + 1)];
    for i in 0..r {
        for j in 0..r {
            m[i * (r + 1) + j] = (0..d).map(|k| basis[k * r + i] * basis[k * r + j]).sum();
        }
        m[i * (r + 1) + r] = (0..d).map(|k| basis[k * r + i] * centred[k]).sum();
    }
    let c = solve_augmented(&mut m, r);
    (0..d)
        .map(|k| mean[k] + (0..r).map(|j| basis[k * r + j] * c[j]).sum::<f64>())
        .collect()
}

fn solve_augmented(m: &mut [f64], r: usize) -> Vec<f64> {
    let w = r + 1;
    for col in 0..r {
        let piv = (col..r)
            .max_by(|&a, &b| m[a * w + col].abs().total_cmp(&m[b * w + col].abs()))
            .unwrap();
        for k in 0..w {
            m.swap(col * w + k, piv * w + k);
        }
        for row in 0..r {
            if row != col {
                let f = m[row * w + col] / m[col * w + col];
                for k in col..w {
                    m[row * w + k] -= f * m[col * w + k];
                }
            }
        }
    }
    (0..r).map(|i| m[i * w + r] / m[i * w + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_identity_and_rank_one() {
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let s = gram_svd_oracle(&eye, 3, 3).singular_values;
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));

        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 4.0, -1.0];
        let a: Vec<f64> = u.iter().flat_map(|ui| v.iter().map(move |vj| ui * vj)).collect();
        let s = gram_svd_oracle(&a, 4, 3).singular_values;
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((s[0] - nu * nv).abs() < 1e-12);
        assert!(s[1].abs() < 1e-6 && s[2].abs() < 1e-6);
    }

    #[test]
    fn fd_quadratic() {
        let theta = [0.3, -1.2, 2.0];
        let g = fd_gradient(|p| p.iter().map(|x| x * x).sum(), &theta, 1e-5);
        for (gi, ti) in g.iter().zip(&theta) {
            assert!((gi - 2.0 * ti).abs() < 1e-8);
        }
    }

    #[test]
    fn fd_score_single_gaussian() {
        let mix = Mixture {
            means: vec![vec![0.4, -0.2]],
            weights: vec![1.0],
            std: 0.3,
        };
        let (x, t) = ([0.1, 0.5], 0.35);
        let s = fd_score(&mix, &x, t, Coeffs::Linear, 1e-5);
        let (a, sg) = (Coeffs::Linear.alpha(t), Coeffs::Linear.sigma(t));
        let var = a * a * 0.09 + sg * sg;
        for i in 0..2 {
            let exact = -(x[i] - a * mix.means[0][i]) / var;
            assert!((s[i] - exact).abs() < 1e-5);
        }
        let sym = Mixture::ring(8, 1.0, 0.05);
        let s0 = fd_score(&sym, &[0.0, 0.0], 0.5, Coeffs::Vp, 1e-5);
        assert!(s0.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn reference_point_mass() {
        let x0 = [1.0, -0.5];
        // Straight path from ε at t = 1 to x0 at t = 0.
        let field = |x: &[f64], t: f64| -> Vec<f64> { x.iter().zip(&x0).map(|(xi, mi)| (xi - mi) / t).collect() };
        let eps = [0.3, 0.9];
        let end = reference_trajectory(field, &eps, 1e-3, 4096);
        for i in 0..2 {
            let exact = (1.0 - 1e-3) * x0[i] + 1e-3 * eps[i];
            assert!((end[i] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_null_is_centred() {
        let mut rng = SplitMix::new(3);
        let mut unif = || rng.next_u64() as f64 / u64::MAX as f64;
        let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![unif(), unif()]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let null = permutation_null(&refs[..30], &refs[30..], 0.5, 200, 1);
        let mean = null.iter().sum::<f64>() / null.len() as f64;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn projection_onto_span() {
        let basis = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = affine_projection(&[2.0, 3.0, 4.0], &[0.0, 0.0, 1.0], &basis, 3, 2);
        assert_eq!(p, vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn report_pass_flag() {
        assert!(OracleReport::scalar("x", 1.0, 1.0 + 1e-12, 1e-9, true).pass);
        assert!(!OracleReport::scalar("x", 1.0, 2.0, 1e-9, false).pass);
        assert!(!OracleReport::compare("len", &[1.0], &[1.0, 2.0], 1.0, false, 1.0).pass);
    }
}
