//! Training: Adam, batch assembly with snippet pairing, and the
//! flow-matching step with masking, null-condition dropout and the optional
//! representation-alignment term.

use alloc::vec::Vec;

use crate::bank::{apply_mask, Bank, MaskSpec};
use crate::error::{Error, Result};
use crate::interpolant::Schedule;
use crate::linalg::{self, Matrix};
use crate::net::{TrainBatch, VelocityNet};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::OutOfRange {
                name: "learning rate",
                value: self.lr,
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::OutOfRange { name, value: b });
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::OutOfRange {
                name: "adam eps",
                value: self.eps,
            });
        }
        Ok(())
    }
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update without weight decay.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.m.len(), state.v.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

/// How conditioning snippets are matched to data samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// Snippet `i` conditions sample `i`.
    #[default]
    Paired,
    /// Snippets drawn uniformly from the bank, independent of the sample.
    Unpaired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mask: MaskSpec,
    /// Probability of replacing a snippet with the zero (null) condition.
    pub p_null: f64,
    pub align_weight: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub pairing: Pairing,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            steps: 20_000,
            batch_size: 128,
            adam: AdamConfig::default(),
            mask: MaskSpec::default(),
            p_null: 0.1,
            align_weight: 0.0,
            seed,
            schedule: Schedule::Linear,
            pairing: Pairing::Paired,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        MaskSpec::new(self.mask.strategy, self.mask.ratio)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_null) {
            return Err(Error::OutOfRange {
                name: "p_null",
                value: self.p_null,
            });
        }
        if !(self.align_weight >= 0.0 && self.align_weight.is_finite()) {
            return Err(Error::OutOfRange {
                name: "alignment weight",
                value: self.align_weight,
            });
        }
        Ok(())
    }
}

/// Data samples with their conditioning snippets.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetBatch {
    pub x0: Matrix,
    pub snippets: Matrix,
    pub data_indices: Vec<usize>,
    pub snippet_indices: Vec<usize>,
}

/// Draw `batch_size` samples. Indices are drawn without replacement; when
/// the batch is larger than the dataset, whole fresh draws are concatenated.
pub fn make_batch(dataset: &Matrix, bank: &Bank, batch_size: usize, pairing: Pairing, rng: &mut Rng) -> Result<SnippetBatch> {
    let n = dataset.rows();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if bank.is_empty() {
        return Err(Error::Empty("memory bank"));
    }
    if pairing == Pairing::Paired && bank.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bank.len(),
        });
    }
    let mut data_indices = Vec::with_capacity(batch_size);
    while data_indices.len() < batch_size {
        let k = (batch_size - data_indices.len()).min(n);
        data_indices.extend(rng.sample_indices(n, k));
    }
    let snippet_indices = match pairing {
        Pairing::Paired => data_indices.clone(),
        Pairing::Unpaired => (0..batch_size).map(|_| rng.below(bank.len())).collect(),
    };
    let mut x0 = Matrix::zeros(0, dataset.cols());
    for &i in &data_indices {
        x0.push_row(dataset.row(i))?;
    }
    let mut snippets = Matrix::zeros(0, bank.dim());
    for &i in &snippet_indices {
        snippets.push_row(&bank.snippet(i)?)?;
    }
    Ok(SnippetBatch {
        x0,
        snippets,
        data_indices,
        snippet_indices,
    })
}

/// Zero each row independently with probability `p`; returns how many were zeroed.
pub fn apply_null_condition(snippets: &mut Matrix, p: f64, rng: &mut Rng) -> usize {
    let mut count = 0;
    for i in 0..snippets.rows() {
        if rng.bernoulli(p) {
            snippets.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub flow_loss: f64,
    pub align_loss: f64,
    pub grad_norm: f64,
}

/// Build the regression batch: `t ~ U[0,1)` and `ε ~ N(0, I)` per sample,
/// masked snippets with null-condition dropout, clean snippets as
/// alignment targets.
pub fn prepare_batch(batch: &SnippetBatch, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainBatch> {
    let (n, dim) = (batch.x0.rows(), batch.x0.cols());
    let mut t = Vec::with_capacity(n);
    let mut x_t = Matrix::zeros(n, dim);
    let mut targets = Matrix::zeros(n, dim);
    let mut eps = alloc::vec![0.0; dim];
    for i in 0..n {
        let ti = rng.uniform();
        rng.fill_normal(&mut eps);
        let s = cfg.schedule.eval(ti)?;
        let x0 = batch.x0.row(i);
        for j in 0..dim {
            x_t[(i, j)] = s.alpha * x0[j] + s.sigma * eps[j];
            targets[(i, j)] = s.d_alpha * x0[j] + s.d_sigma * eps[j];
        }
        t.push(ti);
    }
    let mut snippets = batch.snippets.clone();
    apply_mask(&mut snippets, &cfg.mask, rng)?;
    apply_null_condition(&mut snippets, cfg.p_null, rng);
    let align_targets = (cfg.align_weight > 0.0).then(|| batch.snippets.clone());
    Ok(TrainBatch {
        x_t,
        snippets,
        t,
        targets,
        align_targets,
    })
}

/// One optimization step on `batch`.
pub fn train_step(net: &mut VelocityNet, state: &mut AdamState, batch: &SnippetBatch, cfg: &TrainConfig, rng: &mut Rng) -> Result<StepMetrics> {
    let tb = prepare_batch(batch, cfg, rng)?;
    let lg = net.loss_and_grad(&tb, cfg.align_weight)?;
    if !lg.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grad_norm = linalg::norm(&lg.grad);
    adam_step(net.params_mut(), &lg.grad, state, &cfg.adam)?;
    Ok(StepMetrics {
        loss: lg.loss,
        flow_loss: lg.flow_loss,
        align_loss: lg.align_loss,
        grad_norm,
    })
}

/// Owns the network and optimizer state for a training run.
///
/// Step `k` draws all of its randomness from stream `k` of the run seed, so
/// a run resumed from a saved `(net, state)` continues bitwise identically.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: VelocityNet,
    pub state: AdamState,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(net: VelocityNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let state = AdamState::new(net.param_count());
        Ok(Self { net, state, cfg })
    }

    pub fn resume(net: VelocityNet, state: AdamState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if state.m.len() != net.param_count() || state.v.len() != net.param_count() {
            return Err(Error::DimensionMismatch {
                expected: net.param_count(),
                got: state.m.len(),
            });
        }
        Ok(Self { net, state, cfg })
    }

    pub fn steps_done(&self) -> u64 {
        self.state.step
    }

    pub fn step(&mut self, dataset: &Matrix, bank: &Bank) -> Result<StepMetrics> {
        let mut rng = Rng::stream(self.cfg.seed, self.state.step);
        let batch = make_batch(dataset, bank, self.cfg.batch_size, self.cfg.pairing, &mut rng)?;
        train_step(&mut self.net, &mut self.state, &batch, &self.cfg, &mut rng)
    }
}
