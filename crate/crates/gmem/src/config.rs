//! JSON run configuration.
//!
//! Every section is required and every seed must be given explicitly. Other
//! fields fall back to the default desk recipe. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "data":   { "seed": 1, "encoder_seed": 7, "modes": 8, "radius": 1.0, "std": 0.05,
//!               "n": 20000, "hidden": 64, "feature_dim": 32 },
//!   "bank":   { "rank": null, "per_mode": null, "subsample_seed": null },
//!   "net":    { "seed": 3, "time_dim": 16, "proj_hidden": 64, "trunk": [128, 128, 128] },
//!   "train":  { "seed": 5, "steps": 20000, "batch": 128, "lr": 1e-4, "beta1": 0.9,
//!               "beta2": 0.999, "eps": 1e-8, "mask": "zero", "mask_ratio": 0.4,
//!               "p_null": 0.1, "align_weight": 0.0, "schedule": "linear",
//!               "pairing": "paired", "metrics_every": 100, "checkpoint_every": 5000 },
//!   "sample": { "seed": 11, "solver": "euler", "nfe": 50, "t_min": 0.001,
//!               "diffusion": "sigma", "guidance": 1.0, "count": 2000 },
//!   "eval":   { "heldout_seed": 99, "heldout_n": 4000, "count": 2000,
//!               "nfes": [10, 25, 50, 100, 250], "probe_extent": 1.5,
//!               "probe_points": 21, "probe_times": [0.1, 0.3, 0.5, 0.7, 0.9] }
//! }
//! ```

use std::path::Path;

use gmem_core::bank::{MaskSpec, MaskStrategy};
use gmem_core::data::{GmmSpec, ToyEncoder};
use gmem_core::interpolant::{Schedule, T_MIN};
use gmem_core::net::NetConfig;
use gmem_core::solver::{Diffusion, SampleConfig, SnippetSource, SolverConfig, SolverKind};
use gmem_core::train::{AdamConfig, Pairing, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the synthetic data.
pub const DATA_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub bank: BankSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub encoder_seed: u64,
    #[serde(default = "d_modes")]
    pub modes: usize,
    #[serde(default = "d_radius")]
    pub radius: f64,
    #[serde(default = "d_std")]
    pub std: f64,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
}

/// Bank options. `per_mode` keeps that many rows per nearest mode, drawn with
/// `subsample_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub per_mode: Option<usize>,
    #[serde(default)]
    pub subsample_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub seed: u64,
    #[serde(default = "d_time_dim")]
    pub time_dim: usize,
    #[serde(default = "d_proj_hidden")]
    pub proj_hidden: usize,
    #[serde(default = "d_trunk")]
    pub trunk: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskName {
    #[default]
    Zero,
    Random,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    #[default]
    Linear,
    Vp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairingName {
    #[default]
    Paired,
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    #[default]
    Euler,
    Heun,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionName {
    #[default]
    Sigma,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub mask: MaskName,
    #[serde(default = "d_mask_ratio")]
    pub mask_ratio: f64,
    #[serde(default = "d_p_null")]
    pub p_null: f64,
    #[serde(default)]
    pub align_weight: f64,
    #[serde(default)]
    pub schedule: ScheduleName,
    #[serde(default)]
    pub pairing: PairingName,
    #[serde(default = "d_metrics_every")]
    pub metrics_every: u64,
    #[serde(default = "d_checkpoint_every")]
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverName,
    #[serde(default = "d_nfe")]
    pub nfe: usize,
    #[serde(default = "d_t_min")]
    pub t_min: f64,
    #[serde(default)]
    pub diffusion: DiffusionName,
    #[serde(default = "d_guidance")]
    pub guidance: f64,
    #[serde(default = "d_count")]
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub heldout_seed: u64,
    #[serde(default = "d_heldout_n")]
    pub heldout_n: usize,
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_nfes")]
    pub nfes: Vec<usize>,
    #[serde(default = "d_probe_extent")]
    pub probe_extent: f64,
    #[serde(default = "d_probe_points")]
    pub probe_points: usize,
    #[serde(default = "d_probe_times")]
    pub probe_times: Vec<f64>,
}

fn d_modes() -> usize {
    8
}
fn d_radius() -> f64 {
    1.0
}
fn d_std() -> f64 {
    0.05
}
fn d_n() -> usize {
    20_000
}
fn d_hidden() -> usize {
    ToyEncoder::DEFAULT_HIDDEN
}
fn d_feature_dim() -> usize {
    ToyEncoder::DEFAULT_FEATURES
}
fn d_time_dim() -> usize {
    16
}
fn d_proj_hidden() -> usize {
    64
}
fn d_trunk() -> Vec<usize> {
    vec![128, 128, 128]
}
fn d_steps() -> u64 {
    20_000
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_mask_ratio() -> f64 {
    0.4
}
fn d_p_null() -> f64 {
    0.1
}
fn d_metrics_every() -> u64 {
    100
}
fn d_checkpoint_every() -> u64 {
    5000
}
fn d_nfe() -> usize {
    50
}
fn d_t_min() -> f64 {
    T_MIN
}
fn d_guidance() -> f64 {
    1.0
}
fn d_count() -> usize {
    2000
}
fn d_heldout_n() -> usize {
    4000
}
fn d_nfes() -> Vec<usize> {
    vec![10, 25, 50, 100, 250]
}
fn d_probe_extent() -> f64 {
    1.5
}
fn d_probe_points() -> usize {
    21
}
fn d_probe_times() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

impl RunConfig {
    /// The default desk recipe with the given seeds.
    pub fn with_seeds(data: u64, encoder: u64, net: u64, train: u64, sample: u64, heldout: u64) -> Self {
        let json = serde_json::json!({
            "data": { "seed": data, "encoder_seed": encoder },
            "bank": {},
            "net": { "seed": net },
            "train": { "seed": train },
            "sample": { "seed": sample },
            "eval": { "heldout_seed": heldout },
        });
        serde_json::from_value(json).expect("default recipe deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A missing or unreadable config file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gmm_spec()?;
        self.encoder()?;
        self.net_config(self.data.feature_dim).validate()?;
        self.train_config().validate()?;
        self.solver_config().validate()?;
        if self.data.n == 0 {
            return Err(Error::Config("data.n must be positive".into()));
        }
        if self.bank.per_mode.is_some() != self.bank.subsample_seed.is_some() {
            return Err(Error::Config(
                "bank.per_mode and bank.subsample_seed must be given together".into(),
            ));
        }
        if self.bank.rank == Some(0) || self.bank.per_mode == Some(0) {
            return Err(Error::Config("bank.rank and bank.per_mode must be positive".into()));
        }
        if self.train.metrics_every == 0 || self.train.checkpoint_every == 0 {
            return Err(Error::Config("metric and checkpoint cadences must be positive".into()));
        }
        if !(self.sample.guidance >= 0.0 && self.sample.guidance.is_finite()) {
            return Err(Error::Config("sample.guidance must be finite and non-negative".into()));
        }
        if self.eval.heldout_n < 2 || self.eval.probe_points == 0 || self.eval.probe_times.is_empty() {
            return Err(Error::Config("eval sizes must be positive".into()));
        }
        if self.eval.nfes.contains(&0) {
            return Err(Error::Config("eval.nfes entries must be positive".into()));
        }
        Ok(())
    }

    pub fn gmm_spec(&self) -> Result<GmmSpec> {
        Ok(GmmSpec::ring(self.data.modes, self.data.radius, self.data.std)?)
    }

    pub fn encoder(&self) -> Result<ToyEncoder> {
        Ok(ToyEncoder::new(
            self.data.encoder_seed,
            DATA_DIM,
            self.data.hidden,
            self.data.feature_dim,
        )?)
    }

    pub fn net_config(&self, snippet_dim: usize) -> NetConfig {
        NetConfig {
            data_dim: DATA_DIM,
            snippet_dim,
            time_dim: self.net.time_dim,
            proj_hidden: self.net.proj_hidden,
            trunk: self.net.trunk.clone(),
            seed: self.net.seed,
        }
    }

    pub fn schedule(&self) -> Schedule {
        match self.train.schedule {
            ScheduleName::Linear => Schedule::Linear,
            ScheduleName::Vp => Schedule::Vp,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            mask: MaskSpec {
                strategy: match t.mask {
                    MaskName::Zero => MaskStrategy::Zero,
                    MaskName::Random => MaskStrategy::Random,
                    MaskName::Noise => MaskStrategy::Noise,
                },
                ratio: t.mask_ratio,
            },
            p_null: t.p_null,
            align_weight: t.align_weight,
            seed: t.seed,
            schedule: self.schedule(),
            pairing: match t.pairing {
                PairingName::Paired => Pairing::Paired,
                PairingName::Unpaired => Pairing::Unpaired,
            },
        }
    }

    /// Sampling uses the schedule the model was trained with.
    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.sample;
        SolverConfig {
            kind: s.solver.into(),
            nfe: s.nfe,
            t_min: s.t_min,
            schedule: self.schedule(),
            diffusion: match s.diffusion {
                DiffusionName::Sigma => Diffusion::Sigma,
                DiffusionName::Zero => Diffusion::Zero,
            },
        }
    }

    pub fn sample_config(&self, source: SnippetSource) -> SampleConfig {
        SampleConfig {
            solver: self.solver_config(),
            guidance: self.sample.guidance,
            seed: self.sample.seed,
            source,
        }
    }
}

impl From<SolverName> for SolverKind {
    fn from(s: SolverName) -> Self {
        match s {
            SolverName::Euler => SolverKind::Euler,
            SolverName::Heun => SolverKind::Heun,
            SolverName::Sde => SolverKind::Sde,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"seed": 1, "encoder_seed": 2},
        "bank": {},
        "net": {"seed": 3},
        "train": {"seed": 4},
        "sample": {"seed": 5},
        "eval": {"heldout_seed": 6}
    }"#;

    #[test]
    fn defaults_follow_recipe() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c, RunConfig::with_seeds(1, 2, 3, 4, 5, 6));
        assert_eq!(c.data.n, 20_000);
        assert_eq!(c.train_config(), {
            let mut t = TrainConfig::with_seed(4);
            t.steps = 20_000;
            t
        });
        assert_eq!(c.net_config(32), NetConfig::with_defaults(2, 32, 3));
        assert_eq!(c.solver_config(), SolverConfig::default());
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"width\": 9");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let extra = MINIMAL.replace("\"eval\"", "\"extra\": {}, \"eval\"");
        assert!(matches!(RunConfig::from_json(&extra), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_required() {
        let bad = MINIMAL.replace("\"seed\": 4", "\"steps\": 4");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let bank = MINIMAL.replace("\"bank\": {}", "\"bank\": {\"per_mode\": 10}");
        assert!(matches!(RunConfig::from_json(&bank), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_exit_2() {
        let bad = MINIMAL.replace("\"seed\": 4", "\"seed\": 4, \"lr\": -1.0");
        assert_eq!(RunConfig::from_json(&bad).unwrap_err().exit_code(), 2);
        let bad = MINIMAL.replace("\"seed\": 5", "\"seed\": 5, \"solver\": \"rk4\"");
        assert_eq!(RunConfig::from_json(&bad).unwrap_err().exit_code(), 2);
        let missing = RunConfig::load(Path::new("/nonexistent/config.json")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }
}
