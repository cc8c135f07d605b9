//! Desk-scale quality metrics: RBF-kernel MMD, Fréchet distance on encoder
//! features, conditional mode fidelity, field error against the oracle, and
//! NFE sweeps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::bank::Bank;
use crate::data::{FeatureMap, GmmSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, psd_sqrt, Matrix};
use crate::net::VelocityNet;
use crate::par;
use crate::solver::{self, ConditionalModel, Generated, ModeOracle, NetField, SampleConfig, SnippetRef, VelocityField};

const ROW_BLOCK: usize = 64;
const BINS: usize = 1024;
const COLLECT_CAP: u64 = 1 << 16;

/// Covariance eigenvalue floor for the Fréchet distance.
pub const COV_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mmd {
    pub mmd2: f64,
    /// Median-heuristic bandwidth used for the kernel.
    pub bandwidth: f64,
}

/// Points of `X ∪ Y`, addressed by one index.
struct Union<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
}

impl Union<'_> {
    fn len(&self) -> usize {
        self.x.rows() + self.y.rows()
    }

    fn point(&self, u: usize) -> &[f64] {
        if u < self.x.rows() {
            self.x.row(u)
        } else {
            self.y.row(u - self.x.rows())
        }
    }

    /// Visit every unordered pair's squared distance, rows split into blocks.
    fn block_map<T: Send>(&self, f: impl Fn(&mut dyn FnMut(&mut dyn FnMut(f64))) -> T + Sync) -> Vec<T> {
        let n = self.len();
        let blocks = n.div_ceil(ROW_BLOCK);
        par::map_indexed(blocks, |b| {
            let start = b * ROW_BLOCK;
            let end = (start + ROW_BLOCK).min(n);
            let mut visit = |sink: &mut dyn FnMut(f64)| {
                for i in start..end {
                    let p = self.point(i);
                    for j in (i + 1)..n {
                        sink(linalg::sq_dist(p, self.point(j)));
                    }
                }
            };
            f(&mut visit)
        })
    }
}

/// One refinement level of the median search: a value survives the level if
/// its bin under `(lo, width)` lies in `[k0, k1]`.
#[derive(Clone, Copy)]
struct Level {
    lo: f64,
    width: f64,
    k0: usize,
    k1: usize,
}

impl Level {
    fn bin(&self, v: f64) -> usize {
        if self.width == 0.0 {
            return 0;
        }
        let k = (v - self.lo) / self.width;
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(BINS - 1)
        }
    }
}

fn inside(levels: &[Level], v: f64) -> bool {
    levels.iter().all(|l| (l.k0..=l.k1).contains(&l.bin(v)))
}

struct Histogram {
    counts: Vec<u64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Histogram {
    fn new() -> Self {
        Self {
            counts: vec![0; BINS],
            min: vec![f64::INFINITY; BINS],
            max: vec![f64::NEG_INFINITY; BINS],
        }
    }

    fn merge(&mut self, o: &Histogram) {
        for k in 0..BINS {
            self.counts[k] += o.counts[k];
            self.min[k] = self.min[k].min(o.min[k]);
            self.max[k] = self.max[k].max(o.max[k]);
        }
    }
}

/// Exact median of all pairwise Euclidean distances in `X ∪ Y`, without
/// materializing the distance matrix. For an even pair count the two middle
/// distances are averaged.
pub fn median_pairwise_distance(x: &Matrix, y: &Matrix) -> Result<f64> {
    let u = Union { x, y };
    let n = u.len() as u64;
    if n < 2 {
        return Err(Error::Empty("pairwise distances"));
    }
    let pairs = n * (n - 1) / 2;
    let ranks = [(pairs - 1) / 2, pairs / 2];

    let extremes = u.block_map(|visit| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        visit(&mut |d| {
            lo = lo.min(d);
            hi = hi.max(d);
        });
        (lo, hi)
    });
    let (lo, hi) = extremes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    if !hi.is_finite() {
        return Err(Error::NonFinite("pairwise distances"));
    }

    let mut levels: Vec<Level> = Vec::new();
    let (mut a, mut b) = (lo, hi);
    let mut below = 0u64;
    let picked = loop {
        if a == b {
            break [a, a];
        }
        let level = Level {
            lo: a,
            width: (b - a) / BINS as f64,
            k0: 0,
            k1: BINS - 1,
        };
        let parts = u.block_map(|visit| {
            let mut h = Histogram::new();
            visit(&mut |d| {
                if inside(&levels, d) {
                    let k = level.bin(d);
                    h.counts[k] += 1;
                    h.min[k] = h.min[k].min(d);
                    h.max[k] = h.max[k].max(d);
                }
            });
            h
        });
        let mut h = Histogram::new();
        for p in &parts {
            h.merge(p);
        }
        let mut k_of = [0usize; 2];
        let mut base = [0u64; 2];
        for (r, (k_out, base_out)) in ranks.iter().zip(k_of.iter_mut().zip(base.iter_mut())) {
            let mut cum = below;
            for k in 0..BINS {
                if cum + h.counts[k] > *r {
                    *k_out = k;
                    *base_out = cum;
                    break;
                }
                cum += h.counts[k];
            }
        }
        let (k0, k1) = (k_of[0], k_of[1]);
        let candidates: u64 = h.counts[k0..=k1].iter().sum();
        let narrowed = Level { k0, k1, ..level };
        below = base[0];
        levels.push(narrowed);
        let (na, nb) = (h.min[k0], h.max[k1]);
        if candidates <= COLLECT_CAP || (na == a && nb == b) {
            let parts = u.block_map(|visit| {
                let mut vals = Vec::new();
                visit(&mut |d| {
                    if inside(&levels, d) {
                        vals.push(d);
                    }
                });
                vals
            });
            let mut vals: Vec<f64> = parts.into_iter().flatten().collect();
            vals.sort_unstable_by(f64::total_cmp);
            break [vals[(ranks[0] - below) as usize], vals[(ranks[1] - below) as usize]];
        }
        a = na;
        b = nb;
    };
    Ok(0.5 * (libm::sqrt(picked[0]) + libm::sqrt(picked[1])))
}

fn canonical_order(a: &Matrix, b: &Matrix) -> Ordering {
    a.rows().cmp(&b.rows()).then_with(|| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn within_sum(m: &Matrix, gamma: f64) -> f64 {
    let n = m.rows();
    par::map_indexed(n, |i| {
        let p = m.row(i);
        let mut s = 0.0;
        for j in (i + 1)..n {
            s += libm::exp(-gamma * linalg::sq_dist(p, m.row(j)));
        }
        s
    })
    .into_iter()
    .sum::<f64>()
        * 2.0
}

fn cross_sum(a: &Matrix, b: &Matrix, gamma: f64) -> f64 {
    par::map_indexed(a.rows(), |i| {
        let p = a.row(i);
        b.row_iter().map(|q| libm::exp(-gamma * linalg::sq_dist(p, q))).sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Unbiased MMD² with kernel `exp(−‖x−y‖² / 2h²)` at a given bandwidth.
pub fn mmd_rbf_with_bandwidth(x: &Matrix, y: &Matrix, bandwidth: f64) -> Result<f64> {
    check_sets(x, y)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Degenerate("MMD bandwidth is zero"));
    }
    let gamma = 0.5 / (bandwidth * bandwidth);
    let (m, n) = (x.rows() as f64, y.rows() as f64);
    let sxx = within_sum(x, gamma) / (m * (m - 1.0));
    let syy = within_sum(y, gamma) / (n * (n - 1.0));
    let sxy = match canonical_order(x, y) {
        Ordering::Greater => cross_sum(y, x, gamma),
        _ => cross_sum(x, y, gamma),
    };
    Ok((sxx + syy) - 2.0 * sxy / (m * n))
}

/// Unbiased MMD² with median-heuristic bandwidth over `X ∪ Y`.
/// Bitwise symmetric in its arguments.
pub fn mmd_rbf(x: &Matrix, y: &Matrix) -> Result<Mmd> {
    check_sets(x, y)?;
    let bandwidth = median_pairwise_distance(x, y)?;
    if bandwidth == 0.0 {
        return Err(Error::Degenerate("MMD bandwidth is zero"));
    }
    Ok(Mmd {
        mmd2: mmd_rbf_with_bandwidth(x, y, bandwidth)?,
        bandwidth,
    })
}

fn check_sets(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::InvalidConfig("MMD needs at least two points per set".into()));
    }
    Ok(())
}

/// Sample mean and `1/(n−1)` covariance of the rows.
pub fn mean_and_covariance(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (n, d) = (m.rows(), m.cols());
    if n < 2 {
        return Err(Error::Empty("covariance sample"));
    }
    let mut mean = vec![0.0; d];
    for r in m.row_iter() {
        linalg::axpy(1.0, r, &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in m.row_iter() {
        for j in 0..d {
            c[j] = r[j] - mean[j];
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

fn clamp_covariance(cov: &Matrix) -> Result<Matrix> {
    let eig = linalg::sym_eigen(cov)?;
    let d = cov.rows();
    let q = &eig.vectors;
    let vals: Vec<f64> = eig.values.iter().map(|&l| l.max(COV_CLAMP)).collect();
    let mut out = Matrix::from_fn(d, d, |i, j| (0..d).map(|k| q[(i, k)] * vals[k] * q[(j, k)]).sum());
    symmetrize(&mut out);
    Ok(out)
}

fn symmetrize(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn trace(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| m[(i, i)]).sum()
}

/// Fréchet distance between Gaussians fitted to the encoded sets:
/// `‖μ_X − μ_Y‖² + tr(Σ_X + Σ_Y − 2 (Σ_X^{1/2} Σ_Y Σ_X^{1/2})^{1/2})`.
pub fn frechet_feature_distance(x: &Matrix, y: &Matrix, enc: &(impl FeatureMap + ?Sized)) -> Result<f64> {
    let d = enc.feature_dim();
    if x.rows() <= d || y.rows() <= d {
        return Err(Error::InvalidConfig(format!(
            "Fréchet distance needs more than {d} points per set, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    let fx = enc.encode_all(x)?;
    let fy = enc.encode_all(y)?;
    let (mx, cx) = mean_and_covariance(&fx)?;
    let (my, cy) = mean_and_covariance(&fy)?;
    let cx = clamp_covariance(&cx)?;
    let cy = clamp_covariance(&cy)?;
    let rx = psd_sqrt(&cx)?;
    let mut inner = rx.matmul(&cy)?.matmul(&rx)?;
    symmetrize(&mut inner);
    let cross = trace(&psd_sqrt(&inner)?);
    let mean_term = linalg::sq_dist(&mx, &my);
    Ok((mean_term + trace(&cx) + trace(&cy) - 2.0 * cross).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    pub fidelity: f64,
    /// Per mode; `None` when no sample was conditioned on that mode.
    pub recall: Vec<Option<f64>>,
}

/// Assign each sample to its nearest mode mean and compare with the mode it
/// was conditioned on.
pub fn mode_stats(samples: &Matrix, spec: &GmmSpec, cond_modes: &[usize]) -> Result<ModeStats> {
    if samples.rows() != cond_modes.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.rows(),
            got: cond_modes.len(),
        });
    }
    if samples.rows() == 0 {
        return Err(Error::Empty("samples"));
    }
    if samples.cols() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: samples.cols(),
        });
    }
    let required = 6.0 * spec.std();
    let min_distance = spec.min_separation();
    if spec.modes() > 1 && min_distance <= required {
        return Err(Error::OverlappingModes { min_distance, required });
    }
    let k = spec.modes();
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (x, &c) in samples.row_iter().zip(cond_modes) {
        if c >= k {
            return Err(Error::IndexOutOfRange { index: c, len: k });
        }
        totals[c] += 1;
        if spec.nearest_mode(x) == c {
            hits[c] += 1;
        }
    }
    let fidelity = hits.iter().sum::<usize>() as f64 / samples.rows() as f64;
    let recall = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    Ok(ModeStats { fidelity, recall })
}

/// Root-mean-square of `‖v − v*‖` over every (probe point, time) pair.
pub fn field_rmse(field: &impl VelocityField, oracle: &impl VelocityField, grid: &Matrix, times: &[f64]) -> Result<f64> {
    if grid.rows() == 0 || times.is_empty() {
        return Err(Error::Empty("probe grid"));
    }
    for dim in [field.dim(), oracle.dim()] {
        if dim != grid.cols() {
            return Err(Error::DimensionMismatch {
                expected: grid.cols(),
                got: dim,
            });
        }
    }
    let mut sum = 0.0;
    for x in grid.row_iter() {
        for &t in times {
            let v = field.velocity(x, t)?;
            let o = oracle.velocity(x, t)?;
            sum += linalg::sq_dist(&v, &o);
        }
    }
    Ok(libm::sqrt(sum / (grid.rows() * times.len()) as f64))
}

/// `field_rmse` of the conditional net against the conditional oracle,
/// pooled over several conditioning snippets.
pub fn conditional_field_rmse(net: &VelocityNet, oracle: &ModeOracle, snippets: &Matrix, grid: &Matrix, times: &[f64]) -> Result<f64> {
    if snippets.rows() == 0 {
        return Err(Error::Empty("snippets"));
    }
    let mut sum = 0.0;
    for s in snippets.row_iter() {
        let field = NetField {
            net,
            snippet: s.to_vec(),
        };
        let target = oracle.field(s, 1.0)?;
        let r = field_rmse(&field, &target, grid, times)?;
        sum += r * r;
    }
    Ok(libm::sqrt(sum / snippets.rows() as f64))
}

/// Conditioning mode of each generated sample, via the snippet it used.
pub fn conditioning_modes(samples: &[Generated], bank: &Bank, oracle: &ModeOracle) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|g| {
            let snippet = match &g.snippet {
                SnippetRef::Index(i) => bank.snippet(*i)?,
                SnippetRef::Coefficients(c) => match bank {
                    Bank::Decomposed(db) => db.decode(c)?,
                    Bank::Full(_) => {
                        return Err(Error::InvalidConfig("coefficient snippets need a decomposed bank".into()))
                    }
                },
            };
            Ok(oracle.mode_of(&snippet))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub nfe: usize,
    pub solver: &'static str,
    pub n: usize,
    pub mmd2: f64,
    pub bandwidth: f64,
    pub frechet: f64,
    pub mode_fidelity: f64,
    pub mode_recall: Vec<Option<f64>>,
    pub field_rmse: Option<f64>,
}

/// Everything a sample set is evaluated against.
pub struct EvalContext<'a, E: FeatureMap + ?Sized> {
    pub spec: &'a GmmSpec,
    pub encoder: &'a E,
    pub reference: &'a Matrix,
    pub bank: &'a Bank,
    pub modes: &'a ModeOracle,
}

pub fn evaluate<E: FeatureMap + ?Sized>(ctx: &EvalContext<'_, E>, samples: &[Generated], nfe: usize, solver: &'static str) -> Result<EvalReport> {
    let points = solver::points_of(samples)?;
    let mmd = mmd_rbf(&points, ctx.reference)?;
    let frechet = frechet_feature_distance(&points, ctx.reference, ctx.encoder)?;
    let cond = conditioning_modes(samples, ctx.bank, ctx.modes)?;
    let stats = mode_stats(&points, ctx.spec, &cond)?;
    Ok(EvalReport {
        nfe,
        solver,
        n: samples.len(),
        mmd2: mmd.mmd2,
        bandwidth: mmd.bandwidth,
        frechet,
        mode_fidelity: stats.fidelity,
        mode_recall: stats.recall,
        field_rmse: None,
    })
}

/// One generate-and-evaluate pass per NFE, all with the same seeds. Each
/// entry carries its own outcome so one failing NFE does not hide the rest.
pub fn nfe_sweep<E: FeatureMap + ?Sized>(
    model: &(impl ConditionalModel + ?Sized),
    ctx: &EvalContext<'_, E>,
    base: &SampleConfig,
    nfes: &[usize],
    count: usize,
) -> Vec<(usize, Result<EvalReport>)> {
    nfes.iter()
        .map(|&nfe| {
            let mut cfg = base.clone();
            cfg.solver.nfe = nfe;
            let report = solver::generate(model, ctx.bank, &cfg, count)
                .and_then(|s| evaluate(ctx, &s, nfe, cfg.solver.kind.name()));
            (nfe, report)
        })
        .collect()
}
