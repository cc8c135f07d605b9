//! Stochastic interpolants `x_t = α_t x_0 + σ_t ε` on `t ∈ [0, 1]`
//! (`t = 0` is data, `t = 1` is noise), their velocity targets, the
//! velocity-to-score conversion, and closed-form velocity/score fields for
//! Gaussian-mixture data.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::data::GmmSpec;
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest time at which scores are evaluated and samplers stop.
pub const T_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// `α_t = 1 − t`, `σ_t = t`.
    #[default]
    Linear,
    /// `α_t = cos(πt/2)`, `σ_t = sin(πt/2)`.
    Vp,
}

/// `(α_t, σ_t, α̇_t, σ̇_t)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub sigma: f64,
    pub d_alpha: f64,
    pub d_sigma: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { name: "t", value: t });
    }
    Ok(())
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

impl Schedule {
    pub fn eval(self, t: f64) -> Result<ScheduleValues> {
        check_time(t)?;
        Ok(match self {
            Schedule::Linear => ScheduleValues {
                alpha: 1.0 - t,
                sigma: t,
                d_alpha: -1.0,
                d_sigma: 1.0,
            },
            Schedule::Vp => {
                let (s, c) = (libm::sin(FRAC_PI_2 * t), libm::cos(FRAC_PI_2 * t));
                ScheduleValues {
                    alpha: c,
                    sigma: s,
                    d_alpha: -FRAC_PI_2 * s,
                    d_sigma: FRAC_PI_2 * c,
                }
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Vp => "vp",
        }
    }
}

/// `α_t x_0 + σ_t ε`.
pub fn forward_noise(x0: &[f64], eps: &[f64], t: f64, schedule: Schedule) -> Result<Vec<f64>> {
    check_dims(x0, eps)?;
    let v = schedule.eval(t)?;
    Ok(x0.iter().zip(eps).map(|(a, e)| v.alpha * a + v.sigma * e).collect())
}

/// Regression target `α̇_t x_0 + σ̇_t ε` for the velocity field.
pub fn velocity_target(x0: &[f64], eps: &[f64], t: f64, schedule: Schedule) -> Result<Vec<f64>> {
    check_dims(x0, eps)?;
    let v = schedule.eval(t)?;
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(a, e)| v.d_alpha * a + v.d_sigma * e)
        .collect())
}

/// Score recovered from a velocity:
/// `s = (α_t v − α̇_t x) / (σ_t (α̇_t σ_t − α_t σ̇_t))`.
pub fn score_from_velocity(v: &[f64], x: &[f64], t: f64, schedule: Schedule) -> Result<Vec<f64>> {
    check_dims(v, x)?;
    if t < T_MIN {
        return Err(Error::TimeBelowMinimum { t, t_min: T_MIN });
    }
    let s = schedule.eval(t)?;
    let denom = s.d_alpha * s.sigma - s.alpha * s.d_sigma;
    if denom.abs() < 1e-12 || s.sigma <= 0.0 {
        return Err(Error::VanishingDenominator(t));
    }
    let scale = 1.0 / (s.sigma * denom);
    Ok(v
        .iter()
        .zip(x)
        .map(|(vi, xi)| (s.alpha * vi - s.d_alpha * xi) * scale)
        .collect())
}

/// Exact velocity and score of the marginal `p_t` for mixture data.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFields {
    pub velocity: Vec<f64>,
    pub score: Vec<f64>,
}

/// Closed-form PF-ODE velocity and score when `x_0` follows `spec`.
///
/// Given component `k`, `x_t ~ N(α μ_k, (α²γ² + σ²) I)`; the per-component
/// conditional means of `x_0` and `ε` are averaged under the posterior
/// component weights, which are computed in log space.
pub fn gmm_oracle(spec: &GmmSpec, x: &[f64], t: f64, schedule: Schedule) -> Result<OracleFields> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle input"));
    }
    if t <= 0.0 {
        return Err(Error::OutOfRange { name: "t", value: t });
    }
    let s = schedule.eval(t)?;
    let gamma2 = spec.std() * spec.std();
    let var = s.alpha * s.alpha * gamma2 + s.sigma * s.sigma;

    let dim = spec.dim();
    let mut logw = Vec::with_capacity(spec.modes());
    for (k, &w) in spec.weights().iter().enumerate() {
        let d2: f64 = spec
            .mean(k)
            .iter()
            .zip(x)
            .map(|(m, xi)| (xi - s.alpha * m) * (xi - s.alpha * m))
            .sum();
        logw.push(libm::log(w) - 0.5 * d2 / var);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = logw.iter().map(|l| libm::exp(l - max)).collect();
    let z: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= z);

    let mut ex0 = alloc::vec![0.0; dim];
    let mut eeps = alloc::vec![0.0; dim];
    let gain_x0 = s.alpha * gamma2 / var;
    let gain_eps = s.sigma / var;
    for (k, &p) in post.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &m) in spec.mean(k).iter().enumerate() {
            let r = x[j] - s.alpha * m;
            ex0[j] += p * (m + gain_x0 * r);
            eeps[j] += p * gain_eps * r;
        }
    }
    let velocity = ex0
        .iter()
        .zip(&eeps)
        .map(|(a, e)| s.d_alpha * a + s.d_sigma * e)
        .collect();
    let score = eeps.iter().map(|e| -e / s.sigma).collect();
    Ok(OracleFields { velocity, score })
}

/// `log p_t(x)` for mixture data, used by tests and diagnostics.
pub fn gmm_log_density(spec: &GmmSpec, x: &[f64], t: f64, schedule: Schedule) -> Result<f64> {
    let s = schedule.eval(t)?;
    let var = s.alpha * s.alpha * spec.std() * spec.std() + s.sigma * s.sigma;
    if var <= 0.0 {
        return Err(Error::Degenerate("zero marginal variance"));
    }
    let dim = spec.dim() as f64;
    let terms: Vec<f64> = (0..spec.modes())
        .map(|k| {
            let scaled: Vec<f64> = spec.mean(k).iter().map(|m| s.alpha * m).collect();
            libm::log(spec.weights()[k]) - 0.5 * linalg::sq_dist(x, &scaled) / var
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(terms.iter().map(|l| libm::exp(l - max)).sum::<f64>());
    Ok(lse - 0.5 * dim * libm::log(2.0 * PI * var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::SQRT_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedule_values() {
        let v = Schedule::Linear.eval(0.25).unwrap();
        assert_eq!((v.alpha, v.sigma, v.d_alpha, v.d_sigma), (0.75, 0.25, -1.0, 1.0));
        let v = Schedule::Vp.eval(0.0).unwrap();
        assert_eq!((v.alpha, v.sigma, v.d_alpha), (1.0, 0.0, -0.0));
        assert!(close(v.d_sigma, FRAC_PI_2, 1e-15));
        let v = Schedule::Vp.eval(0.5).unwrap();
        assert!(close(v.alpha, SQRT_2 / 2.0, 1e-15) && close(v.sigma, SQRT_2 / 2.0, 1e-15));
        assert!(close(v.d_alpha, -PI * SQRT_2 / 4.0, 1e-15));
        assert!(close(v.d_sigma, PI * SQRT_2 / 4.0, 1e-15));
        assert!(Schedule::Linear.eval(1.5).is_err());
        assert!(Schedule::Vp.eval(-0.1).is_err());
    }

    #[test]
    fn schedule_boundaries_and_vp_identity() {
        for s in [Schedule::Linear, Schedule::Vp] {
            let a = s.eval(0.0).unwrap();
            let b = s.eval(1.0).unwrap();
            assert!(close(a.alpha, 1.0, 1e-12) && close(a.sigma, 0.0, 1e-12));
            assert!(close(b.alpha, 0.0, 1e-12) && close(b.sigma, 1.0, 1e-12));
        }
        for i in 0..=100 {
            let v = Schedule::Vp.eval(i as f64 / 100.0).unwrap();
            assert!(close(v.alpha * v.alpha + v.sigma * v.sigma, 1.0, 1e-12));
        }
    }

    #[test]
    fn forward_noise_boundaries() {
        let x0 = [1.0, 0.0];
        let e = [0.0, 1.0];
        assert_eq!(forward_noise(&x0, &e, 0.0, Schedule::Linear).unwrap(), x0);
        assert_eq!(forward_noise(&x0, &e, 1.0, Schedule::Linear).unwrap(), e);
        assert_eq!(forward_noise(&x0, &e, 0.5, Schedule::Linear).unwrap(), [0.5, 0.5]);
        assert!(forward_noise(&x0, &[1.0], 0.5, Schedule::Linear).is_err());
    }

    #[test]
    fn velocity_targets() {
        let x0 = [1.0, 0.0];
        let e = [0.0, 1.0];
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(velocity_target(&x0, &e, t, Schedule::Linear).unwrap(), [-1.0, 1.0]);
        }
        let v = velocity_target(&x0, &e, 0.0, Schedule::Vp).unwrap();
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], FRAC_PI_2, 1e-15));
        let x = [0.4, -2.0];
        let v = velocity_target(&x, &x, 0.7, Schedule::Vp).unwrap();
        let s = Schedule::Vp.eval(0.7).unwrap();
        for j in 0..2 {
            assert!(close(v[j], (s.d_alpha + s.d_sigma) * x[j], 1e-15));
        }
    }

    #[test]
    fn score_conversion_point_mass() {
        // x0 = 0: p_t = N(0, t²), v = x/t.
        let s = score_from_velocity(&[2.0], &[1.0], 0.5, Schedule::Linear).unwrap();
        assert!(close(s[0], -4.0, 1e-15));
        // Linear denominator is −1.
        let (v, x, t) = (0.3, -0.8, 0.6);
        let sv = Schedule::Linear.eval(t).unwrap();
        let s = score_from_velocity(&[v], &[x], t, Schedule::Linear).unwrap();
        assert!(close(s[0], -(sv.alpha * v - sv.d_alpha * x) / sv.sigma, 1e-15));
        assert!(matches!(
            score_from_velocity(&[1.0], &[1.0], 1e-4, Schedule::Linear),
            Err(Error::TimeBelowMinimum { .. })
        ));
    }

    #[test]
    fn oracle_closed_form_examples() {
        let spec = GmmSpec::single(&[0.0], 1.0).unwrap();
        for x in [-3.0, 0.2, 5.0] {
            let o = gmm_oracle(&spec, &[x], 0.5, Schedule::Linear).unwrap();
            assert!(close(o.velocity[0], 0.0, 1e-15));
        }
        let o = gmm_oracle(&spec, &[1.0], 0.25, Schedule::Linear).unwrap();
        assert!(close(o.velocity[0], -0.8, 1e-15));

        let mu = [1.0, -0.5];
        let spec = GmmSpec::single(&mu, 0.0).unwrap();
        let x = [0.3, 0.9];
        for t in [0.1, 0.5, 0.9] {
            let o = gmm_oracle(&spec, &x, t, Schedule::Linear).unwrap();
            let sv = Schedule::Linear.eval(t).unwrap();
            for j in 0..2 {
                let expect = -(x[j] - sv.alpha * mu[j]) / (sv.sigma * sv.sigma);
                assert!(close(o.score[j], expect, 1e-12));
            }
            let conv = score_from_velocity(&o.velocity, &x, t, Schedule::Linear).unwrap();
            for (c, s) in conv.iter().zip(&o.score) {
                assert!(close(*c, *s, 1e-12 * s.abs().max(1.0)));
            }
        }
        assert!(gmm_oracle(&spec, &x, 0.0, Schedule::Linear).is_err());
        assert!(gmm_oracle(&spec, &[f64::NAN, 0.0], 0.5, Schedule::Linear).is_err());
    }

    #[test]
    fn point_mass_velocity_is_constant_along_trajectory() {
        let x0 = [1.0, 0.0];
        let eps = [-0.3, 0.8];
        let spec = GmmSpec::single(&x0, 0.0).unwrap();
        for i in 1..=20 {
            let t = i as f64 / 20.0;
            let x = forward_noise(&x0, &eps, t, Schedule::Linear).unwrap();
            let o = gmm_oracle(&spec, &x, t, Schedule::Linear).unwrap();
            assert!(close(o.velocity[0], eps[0] - x0[0], 1e-12));
            assert!(close(o.velocity[1], eps[1] - x0[1], 1e-12));
        }
    }

    #[test]
    fn separated_modes_do_not_underflow() {
        let spec = GmmSpec::ring(8, 100.0, 0.01).unwrap();
        let o = gmm_oracle(&spec, &[100.0, 0.0], 0.01, Schedule::Linear).unwrap();
        assert!(o.velocity.iter().chain(&o.score).all(|v| v.is_finite()));
    }
}
