//! End-to-end steps shared by the CLI and the acceptance harness.

use std::path::{Path, PathBuf};

use gmem_core::bank::{Bank, DecomposedBank, MemoryBank};
use gmem_core::data::{gen_gmm, FeatureMap, FeatureSet, GmmSpec};
use gmem_core::eval::{self, conditional_field_rmse, EvalContext, EvalReport};
use gmem_core::net::VelocityNet;
use gmem_core::solver::{self, Generated, ModeOracle, SampleConfig, SolverKind};
use gmem_core::train::Trainer;
use gmem_core::{Matrix, Rng};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats;
use crate::io::{self, MetricsLog};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Matrix,
    pub features: Matrix,
}

pub fn gen_data(cfg: &RunConfig) -> Result<Dataset> {
    let spec = cfg.gmm_spec()?;
    let enc = cfg.encoder()?;
    let points = gen_gmm(&spec, cfg.data.n, cfg.data.seed)?.points;
    let features = enc.encode_all(&points)?;
    Ok(Dataset { points, features })
}

/// `x.gmf` → `x.features.gmf`.
pub fn features_path(points: &Path) -> PathBuf {
    points.with_extension("features.gmf")
}

/// Keep `per_mode` rows for each mode, grouping rows by the nearest mode of
/// their data point. Returned indices are grouped by mode, ascending within.
pub fn subsample_per_mode(spec: &GmmSpec, points: &Matrix, per_mode: usize, seed: u64) -> Vec<usize> {
    let mut groups = vec![Vec::new(); spec.modes()];
    for (i, p) in points.row_iter().enumerate() {
        groups[spec.nearest_mode(p)].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut keep = Vec::new();
    for g in groups {
        let mut pick: Vec<usize> = rng
            .sample_indices(g.len(), per_mode.min(g.len()))
            .into_iter()
            .map(|k| g[k])
            .collect();
        pick.sort_unstable();
        keep.extend(pick);
    }
    keep
}

/// Normalize features into a bank, subsample and decompose as configured.
pub fn build_bank(cfg: &RunConfig, features: &Matrix, points: Option<&Matrix>) -> Result<Bank> {
    let mut bank = MemoryBank::build(&FeatureSet::new(features.clone())?, cfg.data.encoder_seed)?;
    if let (Some(per_mode), Some(seed)) = (cfg.bank.per_mode, cfg.bank.subsample_seed) {
        let points = points.ok_or_else(|| {
            Error::Config("per-mode subsampling needs the data points (--points)".into())
        })?;
        if points.rows() != bank.len() {
            return Err(gmem_core::Error::DimensionMismatch {
                expected: bank.len(),
                got: points.rows(),
            }
            .into());
        }
        let keep = subsample_per_mode(&cfg.gmm_spec()?, points, per_mode, seed);
        bank = bank.subset(&keep)?;
    }
    Ok(match cfg.bank.rank {
        Some(r) => Bank::Decomposed(DecomposedBank::decompose(&bank, r)?),
        None => Bank::Full(bank),
    })
}

/// Rewrite a bank in decomposed mode at `rank`. A decomposed input is first
/// reconstructed and renormalized.
pub fn decompose(bank: &Bank, rank: usize) -> Result<DecomposedBank> {
    let full = match bank {
        Bank::Full(b) => b.clone(),
        Bank::Decomposed(d) => {
            let mut m = Matrix::zeros(0, d.dim());
            for i in 0..d.len() {
                m.push_row(&d.reconstruct(i)?)?;
            }
            MemoryBank::build(&FeatureSet::new(m)?, d.encoder_seed())?
        }
    };
    Ok(DecomposedBank::decompose(&full, rank)?)
}

/// Largest absolute entry difference between the snippets of two banks.
pub fn reconstruction_error(bank: &Bank, original: &Bank) -> Result<f64> {
    if bank.len() < original.len() || bank.dim() != original.dim() {
        return Err(gmem_core::Error::DimensionMismatch {
            expected: original.len() * original.dim(),
            got: bank.len() * bank.dim(),
        }
        .into());
    }
    let mut worst = 0.0f64;
    for i in 0..original.len() {
        for (a, b) in bank.snippet(i)?.iter().zip(original.snippet(i)?) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.gmc"))
}

pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final.gmc")
}

pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}

fn save_state(path: &Path, trainer: &Trainer) -> Result<()> {
    formats::write_checkpoint(path, &trainer.net)?;
    formats::write_adam(&formats::adam_path(path), &trainer.state)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: VelocityNet,
    pub steps: u64,
    /// Mean loss of the last metrics window, if any step ran.
    pub final_loss: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Train for `cfg.train.steps` total steps, writing `metrics.csv`, periodic
/// `ckpt_NNNNNN.gmc` files and `final.gmc` (each with its `.gma` optimizer
/// state) into `out_dir`. With `resume`, training continues from that
/// checkpoint and its optimizer state and metrics are appended.
pub fn run_training(cfg: &RunConfig, data: &Matrix, bank: &Bank, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tc = cfg.train_config();
    let net_cfg = cfg.net_config(bank.dim());
    let mut trainer = match resume {
        None => Trainer::new(VelocityNet::init(net_cfg)?, tc.clone())?,
        Some(ckpt) => {
            let net = formats::read_checkpoint(ckpt)?;
            if *net.config() != net_cfg {
                return Err(Error::Config(format!(
                    "{}: checkpoint network does not match the config",
                    ckpt.display()
                )));
            }
            let state = formats::read_adam(&formats::adam_path(ckpt))?;
            if state.step > tc.steps {
                return Err(Error::Config(format!(
                    "checkpoint is at step {} beyond train.steps = {}",
                    state.step, tc.steps
                )));
            }
            Trainer::resume(net, state, tc.clone())?
        }
    };
    let mut log = MetricsLog::open(&metrics_path(out_dir), resume.is_some())?;
    let mut checkpoints = Vec::new();
    let mut final_loss = None;
    while trainer.steps_done() < tc.steps {
        let step = trainer.steps_done() + 1;
        let m = trainer.step(data, bank).map_err(|e| {
            let e = Error::from(e);
            if e.exit_code() == 4 {
                Error::Numerical(format!("step {step}: {e}"))
            } else {
                e
            }
        })?;
        log.record(&m);
        if step % cfg.train.metrics_every == 0 {
            final_loss = log.flush(step)?.or(final_loss);
        }
        if step % cfg.train.checkpoint_every == 0 {
            let p = checkpoint_path(out_dir, step);
            save_state(&p, &trainer)?;
            checkpoints.push(p);
        }
    }
    final_loss = log.flush(trainer.steps_done())?.or(final_loss);
    let p = final_checkpoint_path(out_dir);
    save_state(&p, &trainer)?;
    checkpoints.push(p);
    Ok(TrainOutcome {
        steps: trainer.steps_done(),
        net: trainer.net,
        final_loss,
        checkpoints,
    })
}

/// The network must take snippets of the bank's width.
pub fn check_model(net: &VelocityNet, bank: &Bank) -> Result<()> {
    if net.config().snippet_dim != bank.dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}-dim snippets but the bank holds {}-dim snippets",
            net.config().snippet_dim,
            bank.dim()
        )));
    }
    Ok(())
}

pub fn provenance(cfg: &SampleConfig, count: usize, bank: &Bank, net: &VelocityNet) -> serde_json::Value {
    let source = match &cfg.source {
        solver::SnippetSource::Index(i) => serde_json::json!({ "index": i }),
        solver::SnippetSource::Random => serde_json::json!("random"),
        solver::SnippetSource::Coefficients(c) => serde_json::json!({ "coefficients": c }),
    };
    serde_json::json!({
        "solver": cfg.solver.kind.name(),
        "nfe": cfg.solver.nfe,
        "t_min": cfg.solver.t_min,
        "schedule": cfg.solver.schedule.name(),
        "diffusion": format!("{:?}", cfg.solver.diffusion).to_lowercase(),
        "guidance": cfg.guidance,
        "sample_seed": cfg.seed,
        "count": count,
        "source": source,
        "net_seed": net.config().seed,
        "bank_encoder_seed": bank.encoder_seed(),
        "bank_rows": bank.len(),
    })
}

pub fn heldout(cfg: &RunConfig) -> Result<Matrix> {
    Ok(gen_gmm(&cfg.gmm_spec()?, cfg.eval.heldout_n, cfg.eval.heldout_seed)?.points)
}

pub fn mode_oracle(cfg: &RunConfig) -> Result<ModeOracle> {
    Ok(ModeOracle::new(cfg.gmm_spec()?, cfg.schedule(), &cfg.encoder()?)?)
}

/// Square probe grid over `[-e, e]²` from the eval section.
pub fn probe_grid(cfg: &RunConfig) -> Matrix {
    let (n, e) = (cfg.eval.probe_points, cfg.eval.probe_extent);
    let at = |k: usize| if n == 1 { 0.0 } else { -e + 2.0 * e * k as f64 / (n - 1) as f64 };
    Matrix::from_fn(n * n, 2, |i, j| at(if j == 0 { i % n } else { i / n }))
}

/// First bank row conditioning each mode, for modes that have one.
pub fn snippet_per_mode(bank: &Bank, oracle: &ModeOracle, modes: usize) -> Result<Matrix> {
    let mut found: Vec<Option<Vec<f64>>> = vec![None; modes];
    let mut missing = modes;
    for i in 0..bank.len() {
        if missing == 0 {
            break;
        }
        let s = bank.snippet(i)?;
        let k = oracle.mode_of(&s);
        if found[k].is_none() {
            found[k] = Some(s);
            missing -= 1;
        }
    }
    let rows: Vec<Vec<f64>> = found.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(gmem_core::Error::Empty("memory bank").into());
    }
    Ok(Matrix::from_rows(&rows)?)
}

/// RMS distance between the learned conditional field and the single-mode
/// oracle over the configured probe grid and times.
pub fn field_rmse(cfg: &RunConfig, net: &VelocityNet, bank: &Bank) -> Result<f64> {
    let oracle = mode_oracle(cfg)?;
    let snippets = snippet_per_mode(bank, &oracle, cfg.data.modes)?;
    Ok(conditional_field_rmse(net, &oracle, &snippets, &probe_grid(cfg), &cfg.eval.probe_times)?)
}

pub fn solver_name(name: &str) -> &'static str {
    [SolverKind::Euler, SolverKind::Heun, SolverKind::Sde]
        .into_iter()
        .map(SolverKind::name)
        .find(|n| *n == name)
        .unwrap_or("unknown")
}

/// Evaluate a sample set against `reference`. Mode statistics need the
/// snippet references and the bank; without them fidelity is NaN.
pub fn evaluate_samples(
    cfg: &RunConfig,
    samples: &Matrix,
    generated: Option<&[Generated]>,
    bank: Option<&Bank>,
    reference: &Matrix,
    nfe: usize,
    solver: &'static str,
) -> Result<EvalReport> {
    let spec = cfg.gmm_spec()?;
    let enc = cfg.encoder()?;
    if let (Some(g), Some(b)) = (generated, bank) {
        let oracle = mode_oracle(cfg)?;
        let ctx = EvalContext {
            spec: &spec,
            encoder: &enc,
            reference,
            bank: b,
            modes: &oracle,
        };
        return Ok(eval::evaluate(&ctx, g, nfe, solver)?);
    }
    let mmd = eval::mmd_rbf(samples, reference)?;
    Ok(EvalReport {
        nfe,
        solver,
        n: samples.rows(),
        mmd2: mmd.mmd2,
        bandwidth: mmd.bandwidth,
        frechet: eval::frechet_feature_distance(samples, reference, &enc)?,
        mode_fidelity: f64::NAN,
        mode_recall: Vec::new(),
        field_rmse: None,
    })
}

/// One generate-and-evaluate pass per NFE against the held-out reference.
/// Every NFE is attempted; the first failure is returned after the rest.
pub fn sweep_nfe(cfg: &RunConfig, net: &VelocityNet, bank: &Bank, nfes: &[usize], count: usize) -> Result<Vec<EvalReport>> {
    check_model(net, bank)?;
    let spec = cfg.gmm_spec()?;
    let enc = cfg.encoder()?;
    let oracle = mode_oracle(cfg)?;
    let reference = heldout(cfg)?;
    let ctx = EvalContext {
        spec: &spec,
        encoder: &enc,
        reference: &reference,
        bank,
        modes: &oracle,
    };
    let base = cfg.sample_config(solver::SnippetSource::Random);
    let mut reports = Vec::new();
    let mut first_err = None;
    for (nfe, r) in eval::nfe_sweep(net, &ctx, &base, nfes, count) {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("warning: nfe {nfe} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(reports),
    }
}

/// Write samples plus their provenance sidecar.
pub fn write_sample_set(path: &Path, samples: &[Generated], dim: usize, provenance: &serde_json::Value) -> Result<()> {
    io::write_samples(path, samples, dim)?;
    io::write_json(&io::provenance_path(path), provenance)
}
