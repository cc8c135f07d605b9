//! Command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O or file
//! format error, 4 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gmem_core::bank::{normalize, Bank};
use gmem_core::linalg;
use gmem_core::solver::{self, SnippetSource};
use gmem_core::Matrix;

use crate::config::{RunConfig, SolverName, DATA_DIM};
use crate::error::{Error, Result};
use crate::{formats, io, pipeline, plot};

#[derive(Debug, Parser)]
#[command(name = "gmem", version, about = "Memory-bank conditioned flow matching at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the configured mixture and write points and encoder features.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Data points (.gmf).
        #[arg(long)]
        out: PathBuf,
        /// Encoder features; defaults to `<out stem>.features.gmf`.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Normalize features into a memory bank.
    BuildBank {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Data points, needed for per-mode subsampling.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite a bank in decomposed (low-rank) mode.
    Decompose {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print bank dimensions, spectrum and storage.
    Inspect {
        #[arg(long)]
        bank: PathBuf,
        /// Bank to measure reconstruction error against.
        #[arg(long)]
        original: Option<PathBuf>,
    },
    /// Train the velocity network.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Data points (.gmf).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from this checkpoint and its `.gma` optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate samples.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, conflicts_with = "random")]
        snippet_index: Option<usize>,
        /// Uniformly random snippets (the default).
        #[arg(long)]
        random: bool,
        #[command(flatten)]
        opts: SampleOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append interpolated coefficient rows and sample each.
    Interpolate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        /// Comma list, or `a..b` for steps of 0.1.
        #[arg(long, default_value = "0.1..0.9")]
        alphas: String,
        #[command(flatten)]
        opts: SampleOpts,
        #[arg(long)]
        out: PathBuf,
        /// Where to save the extended bank.
        #[arg(long)]
        out_bank: Option<PathBuf>,
    },
    /// Project external features into a decomposed bank.
    Inject {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out_bank: PathBuf,
        /// Sample each injected row with this checkpoint.
        #[arg(long, requires = "out")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: SampleOpts,
    },
    /// Evaluate a sample set against held-out data.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Samples (.csv) or points (.gmf).
        #[arg(long)]
        samples: PathBuf,
        /// Bank the samples were conditioned on; enables mode statistics.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Also report the learned field error.
        #[arg(long, requires = "bank")]
        checkpoint: Option<PathBuf>,
        /// Reference points (.gmf); defaults to the configured held-out draw.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate and evaluate at several NFE.
    SweepNfe {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma list; defaults to eval.nfes.
        #[arg(long)]
        nfes: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG scatter of 2-D samples colored by nearest mode.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
}

/// Overrides of the config's sample section.
#[derive(Debug, Args, Default)]
pub struct SampleOpts {
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub nfe: Option<usize>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverName>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SampleOpts {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(g) = self.guidance {
            cfg.sample.guidance = g;
        }
        if let Some(n) = self.nfe {
            cfg.sample.nfe = n;
        }
        if let Some(s) = self.solver {
            cfg.sample.solver = s;
        }
        if let Some(c) = self.count {
            cfg.sample.count = c;
        }
        if let Some(s) = self.seed {
            cfg.sample.seed = s;
        }
        cfg.validate()
    }
}

/// `"0.1..0.9"` → 0.1, 0.2, …, 0.9; otherwise a comma list.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse alphas {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let tenths = |v: &str| -> Result<i64> {
            let x: f64 = v.trim().parse().map_err(|_| bad())?;
            let k = (x * 10.0).round();
            if (x * 10.0 - k).abs() > 1e-9 {
                return Err(bad());
            }
            Ok(k as i64)
        };
        let (lo, hi) = (tenths(a)?, tenths(b)?);
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).map(|k| k as f64 / 10.0).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_nfes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("cannot parse NFE list {s:?}"))))
        .collect()
}

fn load_model(m: &ModelArgs) -> Result<(RunConfig, gmem_core::net::VelocityNet, Bank)> {
    let cfg = RunConfig::load(&m.config)?;
    let net = formats::read_checkpoint(&m.checkpoint)?;
    let bank = formats::read_bank(&m.bank)?;
    pipeline::check_model(&net, &bank)?;
    Ok((cfg, net, bank))
}

fn read_points(path: &Path) -> Result<io::SampleFile> {
    if path.extension().is_some_and(|e| e == "gmf") {
        Ok(io::SampleFile {
            points: formats::read_features(path)?,
            refs: None,
        })
    } else {
        io::read_samples(path)
    }
}

fn decomposed(bank: Bank, path: &Path, what: &str) -> Result<gmem_core::bank::DecomposedBank> {
    match bank {
        Bank::Decomposed(d) => Ok(d),
        Bank::Full(_) => Err(Error::Config(format!(
            "{}: {what} needs a decomposed bank (run decompose first)",
            path.display()
        ))),
    }
}

/// Sample `cfg.sample.count` points from each listed bank row, in order.
fn sample_rows(cfg: &RunConfig, net: &gmem_core::net::VelocityNet, bank: &Bank, rows: &[usize]) -> Result<Vec<solver::Generated>> {
    let mut out = Vec::new();
    for &r in rows {
        let sc = cfg.sample_config(SnippetSource::Index(r));
        out.extend(solver::generate(net, bank, &sc, cfg.sample.count)?);
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, features } => {
            let cfg = RunConfig::load(&config)?;
            let d = pipeline::gen_data(&cfg)?;
            formats::write_features(&out, &d.points)?;
            let fpath = features.unwrap_or_else(|| pipeline::features_path(&out));
            formats::write_features(&fpath, &d.features)?;
        }
        Command::BuildBank {
            config,
            features,
            points,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let f = formats::read_features(&features)?;
            let p = points.as_deref().map(formats::read_features).transpose()?;
            let bank = pipeline::build_bank(&cfg, &f, p.as_ref())?;
            formats::write_bank(&out, &bank)?;
        }
        Command::Decompose { bank, rank, out } => {
            let b = formats::read_bank(&bank)?;
            let d = pipeline::decompose(&b, rank)?;
            formats::write_bank(&out, &Bank::Decomposed(d))?;
        }
        Command::Inspect { bank, original } => {
            let b = formats::read_bank(&bank)?;
            let file_bytes = std::fs::metadata(&bank).map_err(|e| Error::io(&bank, e))?.len();
            let (mode, rank, spectrum) = match &b {
                Bank::Full(m) => {
                    let mean: Vec<f64> = (0..m.dim())
                        .map(|j| m.snippets().column(j).iter().sum::<f64>() / m.len() as f64)
                        .collect();
                    let c = Matrix::from_fn(m.len(), m.dim(), |i, j| m.snippets()[(i, j)] - mean[j]);
                    ("full", 0, linalg::svd(&c, m.len().min(m.dim()))?.s)
                }
                Bank::Decomposed(d) => ("decomposed", d.rank(), d.singular_values().to_vec()),
            };
            let spectrum: Vec<String> = spectrum.iter().map(|s| format!("{s:.6e}")).collect();
            println!("mode: {mode}");
            println!("encoder_seed: {}", b.encoder_seed());
            println!("rows: {}", b.len());
            println!("dim: {}", b.dim());
            println!("rank: {rank}");
            println!("singular_values: {}", spectrum.join(" "));
            println!("payload_bytes: {}", b.payload_bytes());
            println!("file_bytes: {file_bytes}");
            if let Some(o) = original {
                let orig = formats::read_bank(&o)?;
                println!("reconstruction_error: {:e}", pipeline::reconstruction_error(&b, &orig)?);
            }
        }
        Command::Train {
            config,
            data,
            bank,
            out_dir,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let points = formats::read_features(&data)?;
            let b = formats::read_bank(&bank)?;
            if b.encoder_seed() != cfg.data.encoder_seed {
                eprintln!(
                    "warning: bank encoder seed {} differs from data.encoder_seed {}",
                    b.encoder_seed(),
                    cfg.data.encoder_seed
                );
            }
            let out = pipeline::run_training(&cfg, &points, &b, &out_dir, resume.as_deref())?;
            match out.final_loss {
                Some(l) => println!("final loss {l:.6} after {} steps", out.steps),
                None => println!("no training steps run"),
            }
        }
        Command::Sample {
            model,
            snippet_index,
            random: _,
            opts,
            out,
        } => {
            let (mut cfg, net, bank) = load_model(&model)?;
            opts.apply(&mut cfg)?;
            let source = snippet_index.map_or(SnippetSource::Random, SnippetSource::Index);
            let sc = cfg.sample_config(source);
            let g = solver::generate(&net, &bank, &sc, cfg.sample.count)?;
            let prov = pipeline::provenance(&sc, cfg.sample.count, &bank, &net);
            pipeline::write_sample_set(&out, &g, DATA_DIM, &prov)?;
        }
        Command::Interpolate {
            model,
            i,
            j,
            alphas,
            opts,
            out,
            out_bank,
        } => {
            let (mut cfg, net, bank) = load_model(&model)?;
            opts.apply(&mut cfg)?;
            let alphas = parse_alphas(&alphas)?;
            let mut db = decomposed(bank, &model.bank, "interpolate")?;
            let mut rows = Vec::new();
            for &a in &alphas {
                let c = db.interpolate(i, j, a)?;
                rows.push(db.append_coeff(&c)?);
            }
            let bank = Bank::Decomposed(db);
            let g = sample_rows(&cfg, &net, &bank, &rows)?;
            let mut prov = pipeline::provenance(&cfg.sample_config(SnippetSource::Random), cfg.sample.count, &bank, &net);
            prov["source"] = serde_json::json!({ "interpolate": { "i": i, "j": j, "alphas": alphas, "rows": rows } });
            pipeline::write_sample_set(&out, &g, DATA_DIM, &prov)?;
            if let Some(p) = out_bank {
                formats::write_bank(&p, &bank)?;
            }
        }
        Command::Inject {
            config,
            bank,
            features,
            out_bank,
            checkpoint,
            out,
            opts,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            opts.apply(&mut cfg)?;
            let mut db = decomposed(formats::read_bank(&bank)?, &bank, "inject")?;
            if db.encoder_seed() != cfg.data.encoder_seed {
                eprintln!(
                    "warning: bank encoder seed {} differs from data.encoder_seed {}; injected features may live in a different space",
                    db.encoder_seed(),
                    cfg.data.encoder_seed
                );
            }
            let f = formats::read_features(&features)?;
            let mut rows = Vec::new();
            for (k, row) in f.row_iter().enumerate() {
                let unit = normalize(row).map_err(|_| gmem_core::Error::ZeroNorm(k))?;
                let c = db.project_external(&unit)?;
                rows.push(db.append_coeff(&c)?);
            }
            let b = Bank::Decomposed(db);
            formats::write_bank(&out_bank, &b)?;
            if let (Some(ck), Some(out)) = (checkpoint, out) {
                let net = formats::read_checkpoint(&ck)?;
                pipeline::check_model(&net, &b)?;
                let g = sample_rows(&cfg, &net, &b, &rows)?;
                let mut prov = pipeline::provenance(&cfg.sample_config(SnippetSource::Random), cfg.sample.count, &b, &net);
                prov["source"] = serde_json::json!({ "injected_rows": rows });
                pipeline::write_sample_set(&out, &g, DATA_DIM, &prov)?;
            }
        }
        Command::Eval {
            config,
            samples,
            bank,
            checkpoint,
            reference,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let sf = read_points(&samples)?;
            let reference = match reference {
                Some(r) => formats::read_features(&r)?,
                None => pipeline::heldout(&cfg)?,
            };
            let b = bank.as_deref().map(formats::read_bank).transpose()?;
            let prov: Option<serde_json::Value> = std::fs::read_to_string(io::provenance_path(&samples))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let nfe = prov.as_ref().and_then(|p| p["nfe"].as_u64()).unwrap_or(0) as usize;
            let solver = pipeline::solver_name(prov.as_ref().and_then(|p| p["solver"].as_str()).unwrap_or(""));
            let generated = sf.generated();
            let mut report = pipeline::evaluate_samples(&cfg, &sf.points, generated.as_deref(), b.as_ref(), &reference, nfe, solver)?;
            if let (Some(ck), Some(b)) = (checkpoint, b.as_ref()) {
                let net = formats::read_checkpoint(&ck)?;
                pipeline::check_model(&net, b)?;
                report.field_rmse = Some(pipeline::field_rmse(&cfg, &net, b)?);
            }
            io::write_eval_csv(&out, std::slice::from_ref(&report))?;
            io::write_json(&io::recall_path(&out), &io::recall_json(std::slice::from_ref(&report)))?;
            println!(
                "n {} mmd2 {:e} bandwidth {:e} frechet {:e} mode_fidelity {}{}",
                report.n,
                report.mmd2,
                report.bandwidth,
                report.frechet,
                report.mode_fidelity,
                report.field_rmse.map(|r| format!(" field_rmse {r:e}")).unwrap_or_default()
            );
        }
        Command::SweepNfe { model, nfes, count, out } => {
            let (cfg, net, bank) = load_model(&model)?;
            let nfes = match nfes {
                Some(s) => parse_nfes(&s)?,
                None => cfg.eval.nfes.clone(),
            };
            let reports = pipeline::sweep_nfe(&cfg, &net, &bank, &nfes, count.unwrap_or(cfg.eval.count))?;
            io::write_eval_csv(&out, &reports)?;
            io::write_json(&io::recall_path(&out), &io::recall_json(&reports))?;
        }
        Command::Plot { config, samples, out } => {
            let cfg = RunConfig::load(&config)?;
            let sf = read_points(&samples)?;
            let svg = plot::scatter_svg(&sf.points, &cfg.gmm_spec()?)?;
            std::fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
        }
    }
    Ok(())
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
