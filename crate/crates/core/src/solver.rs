//! Sampling: Euler and Heun integrators for the probability-flow ODE, an
//! Euler–Maruyama integrator for the reverse SDE, classifier-free guidance,
//! snippet selection and batched generation.
//!
//! All integrators run on the uniform grid `t_k = 1 − k (1 − t_min) / nfe`,
//! from noise at `t = 1` down to `t_min`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::bank::Bank;
use crate::data::{FeatureMap, GmmSpec};
use crate::error::{Error, Result};
use crate::interpolant::{gmm_oracle, score_from_velocity, Schedule, T_MIN};
use crate::linalg::{self, Matrix};
use crate::net::VelocityNet;
use crate::par;
use crate::rng::Rng;

/// A time-dependent vector field `v(x, t)`.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }
}

/// Field given by a closure.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.f)(x, t))
    }
}

/// Exact PF-ODE velocity for mixture data.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleField {
    pub spec: GmmSpec,
    pub schedule: Schedule,
}

impl VelocityField for OracleField {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(gmm_oracle(&self.spec, x, t, self.schedule)?.velocity)
    }
}

/// Learned field with a fixed conditioning snippet.
#[derive(Debug, Clone)]
pub struct NetField<'a> {
    pub net: &'a VelocityNet,
    pub snippet: Vec<f64>,
}

impl VelocityField for NetField<'_> {
    fn dim(&self) -> usize {
        self.net.config().data_dim
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.net.forward(x, &self.snippet, t)
    }
}

/// Classifier-free guidance with the zero vector as null condition:
/// `v_null + w (v_cond − v_null)`.
///
/// `w = 1` evaluates only the conditional field and `w = 0` only the null
/// field, so both reproduce the unguided paths exactly.
#[derive(Debug, Clone)]
pub struct GuidedField<'a> {
    net: &'a VelocityNet,
    cond: Vec<f64>,
    null: Vec<f64>,
    scale: f64,
}

pub fn cfg_field<'a>(net: &'a VelocityNet, snippet: &[f64], scale: f64) -> Result<GuidedField<'a>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::OutOfRange {
            name: "guidance scale",
            value: scale,
        });
    }
    let d = net.config().snippet_dim;
    if snippet.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: snippet.len(),
        });
    }
    Ok(GuidedField {
        net,
        cond: snippet.to_vec(),
        null: vec![0.0; d],
        scale,
    })
}

impl VelocityField for GuidedField<'_> {
    fn dim(&self) -> usize {
        self.net.config().data_dim
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if self.scale == 1.0 {
            return self.net.forward(x, &self.cond, t);
        }
        let null = self.net.forward(x, &self.null, t)?;
        if self.scale == 0.0 {
            return Ok(null);
        }
        let cond = self.net.forward(x, &self.cond, t)?;
        Ok(null
            .iter()
            .zip(&cond)
            .map(|(n, c)| n + self.scale * (c - n))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Euler,
    Heun,
    Sde,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Heun => "heun",
            SolverKind::Sde => "sde",
        }
    }
}

/// Diffusion coefficient `ω_t` of the reverse SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Diffusion {
    /// `ω_t = σ_t`.
    #[default]
    Sigma,
    /// `ω_t = 0`: the SDE integrator reduces to Euler on the ODE.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Number of integration steps.
    pub nfe: usize,
    pub t_min: f64,
    pub schedule: Schedule,
    pub diffusion: Diffusion,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Euler,
            nfe: 50,
            t_min: T_MIN,
            schedule: Schedule::Linear,
            diffusion: Diffusion::Sigma,
        }
    }
}

impl SolverConfig {
    pub fn new(kind: SolverKind, nfe: usize) -> Self {
        Self {
            kind,
            nfe,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::InvalidConfig("nfe must be at least 1".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::OutOfRange {
                name: "t_min",
                value: self.t_min,
            });
        }
        Ok(())
    }

    /// `nfe + 1` times from 1 down to exactly `t_min`.
    pub fn grid(&self) -> Vec<f64> {
        let h = (1.0 - self.t_min) / self.nfe as f64;
        let mut g: Vec<f64> = (0..self.nfe).map(|k| 1.0 - k as f64 * h).collect();
        g.push(self.t_min);
        g
    }
}

fn check_state(x: &[f64], step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step });
    }
    Ok(())
}

fn check_init(field: &impl VelocityField, x: &[f64]) -> Result<()> {
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn euler_ode(field: &impl VelocityField, x_init: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_init(field, x_init)?;
    let grid = cfg.grid();
    let mut x = x_init.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        let v = field.velocity(&x, w[0])?;
        linalg::axpy(w[1] - w[0], &v, &mut x);
        check_state(&x, k)?;
    }
    Ok(x)
}

/// Trapezoidal predictor-corrector. Falls back to an Euler step if the
/// corrector time would fall below `t_min`.
pub fn heun_ode(field: &impl VelocityField, x_init: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_init(field, x_init)?;
    let grid = cfg.grid();
    let mut x = x_init.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        let h = w[1] - w[0];
        let v0 = field.velocity(&x, w[0])?;
        if w[1] < cfg.t_min {
            linalg::axpy(h, &v0, &mut x);
        } else {
            let mut pred = x.clone();
            linalg::axpy(h, &v0, &mut pred);
            let v1 = field.velocity(&pred, w[1])?;
            for ((xi, a), b) in x.iter_mut().zip(&v0).zip(&v1) {
                *xi += 0.5 * h * (a + b);
            }
        }
        check_state(&x, k)?;
    }
    Ok(x)
}

/// Euler–Maruyama on `dx = [v − ½ ω_t s] dt + √ω_t dW̄` from 1 to `t_min`,
/// with the score recovered from the velocity.
pub fn sde_sample(field: &impl VelocityField, x_init: &[f64], cfg: &SolverConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_init(field, x_init)?;
    let grid = cfg.grid();
    let mut x = x_init.to_vec();
    let mut noise = vec![0.0; x.len()];
    for (k, w) in grid.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let v = field.velocity(&x, t)?;
        let omega = match cfg.diffusion {
            Diffusion::Sigma => cfg.schedule.eval(t)?.sigma,
            Diffusion::Zero => 0.0,
        };
        if omega == 0.0 {
            linalg::axpy(h, &v, &mut x);
        } else {
            let score = score_from_velocity(&v, &x, t, cfg.schedule)?;
            rng.fill_normal(&mut noise);
            let amp = libm::sqrt(omega * h.abs());
            for i in 0..x.len() {
                x[i] += (v[i] - 0.5 * omega * score[i]) * h + amp * noise[i];
            }
        }
        check_state(&x, k)?;
    }
    Ok(x)
}

/// Run whichever integrator `cfg.kind` names.
pub fn integrate(field: &impl VelocityField, x_init: &[f64], cfg: &SolverConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    match cfg.kind {
        SolverKind::Euler => euler_ode(field, x_init, cfg),
        SolverKind::Heun => heun_ode(field, x_init, cfg),
        SolverKind::Sde => sde_sample(field, x_init, cfg, rng),
    }
}

/// Where a generated sample's conditioning snippet comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SnippetSource {
    Index(usize),
    #[default]
    Random,
    /// Coefficients decoded through a decomposed bank's basis.
    Coefficients(Vec<f64>),
}

/// Provenance of the snippet used for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SnippetRef {
    Index(usize),
    Coefficients(Vec<f64>),
}

pub fn select_snippet(bank: &Bank, source: &SnippetSource, rng: &mut Rng) -> Result<(Vec<f64>, SnippetRef)> {
    if bank.is_empty() {
        return Err(Error::Empty("memory bank"));
    }
    match source {
        SnippetSource::Index(i) => Ok((bank.snippet(*i)?, SnippetRef::Index(*i))),
        SnippetSource::Random => {
            let i = rng.below(bank.len());
            Ok((bank.snippet(i)?, SnippetRef::Index(i)))
        }
        SnippetSource::Coefficients(c) => match bank {
            Bank::Decomposed(db) => Ok((db.decode(c)?, SnippetRef::Coefficients(c.clone()))),
            Bank::Full(_) => Err(Error::InvalidConfig(
                "coefficient snippets need a decomposed bank".into(),
            )),
        },
    }
}

/// A family of fields indexed by conditioning snippet.
pub trait ConditionalModel: Sync {
    fn data_dim(&self) -> usize;
    fn field<'a>(&'a self, snippet: &[f64], guidance: f64) -> Result<Box<dyn VelocityField + 'a>>;
}

impl ConditionalModel for VelocityNet {
    fn data_dim(&self) -> usize {
        self.config().data_dim
    }

    fn field<'a>(&'a self, snippet: &[f64], guidance: f64) -> Result<Box<dyn VelocityField + 'a>> {
        Ok(Box::new(cfg_field(self, snippet, guidance)?))
    }
}

/// Exact conditional field: the snippet's mode is the mode whose encoded
/// mean has the largest cosine similarity with it, and the field is the
/// oracle velocity of that single component. Guidance is ignored.
#[derive(Debug, Clone)]
pub struct ModeOracle {
    spec: GmmSpec,
    schedule: Schedule,
    mode_features: Matrix,
}

impl ModeOracle {
    pub fn new(spec: GmmSpec, schedule: Schedule, enc: &impl FeatureMap) -> Result<Self> {
        let mode_features = enc.encode_all(spec.means())?;
        Ok(Self {
            spec,
            schedule,
            mode_features,
        })
    }

    pub fn mode_of(&self, snippet: &[f64]) -> usize {
        mode_by_cosine(&self.mode_features, snippet)
    }
}

/// Row of `mode_features` with the largest cosine similarity to `snippet`.
pub fn mode_by_cosine(mode_features: &Matrix, snippet: &[f64]) -> usize {
    let ns = linalg::norm(snippet).max(f64::MIN_POSITIVE);
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (k, f) in mode_features.row_iter().enumerate() {
        let c = linalg::dot(f, snippet) / (linalg::norm(f).max(f64::MIN_POSITIVE) * ns);
        if c > best_cos {
            best_cos = c;
            best = k;
        }
    }
    best
}

impl ConditionalModel for ModeOracle {
    fn data_dim(&self) -> usize {
        self.spec.dim()
    }

    fn field<'a>(&'a self, snippet: &[f64], _guidance: f64) -> Result<Box<dyn VelocityField + 'a>> {
        Ok(Box::new(OracleField {
            spec: self.spec.component(self.mode_of(snippet))?,
            schedule: self.schedule,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub solver: SolverConfig,
    pub guidance: f64,
    pub seed: u64,
    pub source: SnippetSource,
}

impl SampleConfig {
    pub fn new(solver: SolverConfig, seed: u64) -> Self {
        Self {
            solver,
            guidance: 1.0,
            seed,
            source: SnippetSource::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub point: Vec<f64>,
    pub snippet: SnippetRef,
}

/// Generate `count` samples. Sample `i` uses stream `i` of `cfg.seed` for
/// its initial noise, its snippet draw and any SDE noise, so the output does
/// not depend on how samples are scheduled across threads.
pub fn generate(model: &(impl ConditionalModel + ?Sized), bank: &Bank, cfg: &SampleConfig, count: usize) -> Result<Vec<Generated>> {
    cfg.solver.validate()?;
    let dim = model.data_dim();
    let results = par::map_indexed(count, |i| -> Result<Generated> {
        let mut rng = Rng::stream(cfg.seed, i as u64);
        let eps = rng.normal_vec(dim);
        let (snippet, provenance) = select_snippet(bank, &cfg.source, &mut rng)?;
        let field = model.field(&snippet, cfg.guidance)?;
        let point = integrate(&field, &eps, &cfg.solver, &mut rng)?;
        Ok(Generated {
            point,
            snippet: provenance,
        })
    });
    results.into_iter().collect()
}

/// Stack generated points into a matrix.
pub fn points_of(samples: &[Generated]) -> Result<Matrix> {
    let dim = samples.first().map_or(0, |s| s.point.len());
    let mut m = Matrix::zeros(0, dim);
    for s in samples {
        m.push_row(&s.point)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{DecomposedBank, MemoryBank};
    use crate::data::FeatureSet;
    use crate::net::NetConfig;

    fn point_mass() -> OracleField {
        OracleField {
            spec: GmmSpec::single(&[1.0, 0.0], 0.0).unwrap(),
            schedule: Schedule::Linear,
        }
    }

    #[test]
    fn grid_endpoints() {
        let g = SolverConfig::new(SolverKind::Euler, 4).grid();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[4], T_MIN);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn euler_exact_on_point_mass() {
        let f = point_mass();
        let eps = [0.7, -1.3];
        for nfe in [1, 2, 7, 50] {
            let cfg = SolverConfig::new(SolverKind::Euler, nfe);
            let x = euler_ode(&f, &eps, &cfg).unwrap();
            let (a, s) = (1.0 - T_MIN, T_MIN);
            assert!((x[0] - (a + s * eps[0])).abs() <= 1e-9);
            assert!((x[1] - s * eps[1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn euler_single_step_definition() {
        let f = FnField {
            dim: 1,
            f: |x: &[f64], t: f64| vec![x[0] * t + 2.0],
        };
        let x = euler_ode(&f, &[0.5], &SolverConfig::new(SolverKind::Euler, 1)).unwrap();
        assert_eq!(x[0], 0.5 + (0.5 * 1.0 + 2.0) * (T_MIN - 1.0));
    }

    #[test]
    fn heun_exact_on_constant_field() {
        let f = FnField {
            dim: 2,
            f: |_: &[f64], _: f64| vec![0.3, -2.0],
        };
        for nfe in [1, 3, 10] {
            let x = heun_ode(&f, &[1.0, 1.0], &SolverConfig::new(SolverKind::Heun, nfe)).unwrap();
            assert!((x[0] - (1.0 - 0.3 * (1.0 - T_MIN))).abs() < 1e-14);
            assert!((x[1] - (1.0 + 2.0 * (1.0 - T_MIN))).abs() < 1e-14);
        }
    }

    #[test]
    fn sde_without_diffusion_is_euler() {
        let f = OracleField {
            spec: GmmSpec::default_ring(),
            schedule: Schedule::Linear,
        };
        let mut cfg = SolverConfig::new(SolverKind::Sde, 40);
        cfg.diffusion = Diffusion::Zero;
        let eps = [0.2, -0.9];
        let a = sde_sample(&f, &eps, &cfg, &mut Rng::new(1)).unwrap();
        let b = euler_ode(&f, &eps, &SolverConfig::new(SolverKind::Euler, 40)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sde_is_seeded() {
        let f = point_mass();
        let cfg = SolverConfig::new(SolverKind::Sde, 30);
        let a = sde_sample(&f, &[0.1, 0.2], &cfg, &mut Rng::new(4)).unwrap();
        let b = sde_sample(&f, &[0.1, 0.2], &cfg, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_state_aborts() {
        let f = FnField {
            dim: 1,
            f: |_: &[f64], t: f64| vec![if t < 0.5 { f64::NAN } else { 1.0 }],
        };
        let r = euler_ode(&f, &[0.0], &SolverConfig::new(SolverKind::Euler, 4));
        assert_eq!(r, Err(Error::NonFiniteState { step: 3 }));
    }

    #[test]
    fn invalid_configs() {
        let f = point_mass();
        assert!(euler_ode(&f, &[0.0, 0.0], &SolverConfig::new(SolverKind::Euler, 0)).is_err());
        let mut cfg = SolverConfig::new(SolverKind::Euler, 3);
        cfg.t_min = 0.0;
        assert!(euler_ode(&f, &[0.0, 0.0], &cfg).is_err());
        assert!(euler_ode(&f, &[0.0], &SolverConfig::new(SolverKind::Euler, 3)).is_err());
    }

    fn tiny_net() -> VelocityNet {
        VelocityNet::init(NetConfig {
            data_dim: 2,
            snippet_dim: 3,
            time_dim: 4,
            proj_hidden: 4,
            trunk: vec![8, 8],
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn guidance_degenerate_scales() {
        let net = tiny_net();
        let s = [0.6, 0.0, 0.8];
        let x = [0.4, -0.1];
        let cond = net.forward(&x, &s, 0.3).unwrap();
        let null = net.forward(&x, &[0.0; 3], 0.3).unwrap();
        assert_eq!(cfg_field(&net, &s, 1.0).unwrap().velocity(&x, 0.3).unwrap(), cond);
        assert_eq!(cfg_field(&net, &s, 0.0).unwrap().velocity(&x, 0.3).unwrap(), null);
        let g = cfg_field(&net, &s, 2.0).unwrap().velocity(&x, 0.3).unwrap();
        for j in 0..2 {
            assert!((g[j] - (2.0 * cond[j] - null[j])).abs() < 1e-15);
        }
        assert!(cfg_field(&net, &s, -1.0).is_err());
    }

    fn bank(n: usize) -> MemoryBank {
        let mut rng = Rng::new(6);
        let m = Matrix::from_fn(n, 3, |_, _| rng.normal());
        MemoryBank::build(&FeatureSet::new(m).unwrap(), 0).unwrap()
    }

    #[test]
    fn snippet_selection() {
        let full = Bank::Full(bank(4));
        let mut rng = Rng::new(0);
        let (s, r) = select_snippet(&full, &SnippetSource::Index(2), &mut rng).unwrap();
        assert_eq!(s, full.snippet(2).unwrap());
        assert_eq!(r, SnippetRef::Index(2));
        assert!(select_snippet(&full, &SnippetSource::Index(4), &mut rng).is_err());
        assert!(select_snippet(&full, &SnippetSource::Coefficients(vec![0.0]), &mut rng).is_err());

        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            if let (_, SnippetRef::Index(i)) = select_snippet(&full, &SnippetSource::Random, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let sd = libm::sqrt(0.25 * 0.75 * n as f64);
        for c in counts {
            assert!((c as f64 - 0.25 * n as f64).abs() <= 3.0 * sd);
        }

        let db = DecomposedBank::decompose(&bank(10), 3).unwrap();
        let c = db.interpolate(1, 5, 1.0).unwrap();
        let dbank = Bank::Decomposed(db.clone());
        let (s, _) = select_snippet(&dbank, &SnippetSource::Coefficients(c), &mut rng).unwrap();
        assert_eq!(s, db.reconstruct(1).unwrap());
    }

    #[test]
    fn generate_counts_and_determinism() {
        let net = tiny_net();
        let b = Bank::Full(bank(5));
        let cfg = SampleConfig::new(SolverConfig::new(SolverKind::Heun, 5), 9);
        assert!(generate(&net, &b, &cfg, 0).unwrap().is_empty());
        let a = generate(&net, &b, &cfg, 6).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, generate(&net, &b, &cfg, 6).unwrap());
    }
}
