use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmem::config::RunConfig;
use gmem::{formats, io};

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let run = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let mut cfg = RunConfig::with_seeds(1, 7, 3, 5, 11, 99);
        cfg.data.n = 600;
        cfg.net.trunk = vec![32, 32];
        cfg.net.proj_hidden = 16;
        cfg.net.time_dim = 8;
        cfg.train.steps = 200;
        cfg.train.batch = 32;
        cfg.train.checkpoint_every = 100;
        cfg.sample.count = 64;
        cfg.sample.nfe = 8;
        cfg.eval.heldout_n = 400;
        cfg.eval.count = 64;
        run.write_config("c.json", &cfg);
        run
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).display().to_string()
    }

    fn write_config(&self, name: &str, cfg: &RunConfig) {
        std::fs::write(self.p(name), cfg.to_json()).unwrap();
    }

    fn gmem(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gmem")).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.gmem(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "gmem {args:?}\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.gmem(args).status.code().unwrap()
    }

    /// gen-data, build-bank, full-rank decompose, train.
    fn prepared(self) -> Self {
        let c = self.s("c.json");
        self.ok(&["gen-data", "--config", &c, "--out", &self.s("data.gmf")]);
        self.ok(&["build-bank", "--config", &c, "--features", &self.s("data.features.gmf"), "--out", &self.s("bank.gmb")]);
        self.ok(&["decompose", "--bank", &self.s("bank.gmb"), "--rank", "32", "--out", &self.s("dbank.gmb")]);
        self.ok(&["train", "--config", &c, "--data", &self.s("data.gmf"), "--bank", &self.s("dbank.gmb"), "--out-dir", &self.s("run")]);
        self
    }

    fn model(&self) -> Vec<String> {
        vec![
            "--config".into(),
            self.s("c.json"),
            "--checkpoint".into(),
            self.s("run/final.gmc"),
            "--bank".into(),
            self.s("dbank.gmb"),
        ]
    }

    fn with_model(&self, head: &[&str], tail: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        v.extend(self.model());
        v.extend(tail.iter().map(|s| s.to_string()));
        v
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn points(path: &Path) -> gmem_core::Matrix {
    io::read_samples(path).unwrap().points
}

#[test]
fn gen_data_headers_and_determinism() {
    let r = Run::new();
    let c = r.s("c.json");
    r.ok(&["gen-data", "--config", &c, "--out", &r.s("a.gmf")]);
    r.ok(&["gen-data", "--config", &c, "--out", &r.s("b.gmf"), "--features", &r.s("bf.gmf")]);
    let pts = formats::read_features(&r.p("a.gmf")).unwrap();
    let feats = formats::read_features(&r.p("a.features.gmf")).unwrap();
    assert_eq!((pts.rows(), pts.cols()), (600, 2));
    assert_eq!((feats.rows(), feats.cols()), (600, 32));
    assert_eq!(std::fs::read(r.p("a.gmf")).unwrap(), std::fs::read(r.p("b.gmf")).unwrap());
    assert_eq!(std::fs::read(r.p("a.features.gmf")).unwrap(), std::fs::read(r.p("bf.gmf")).unwrap());

    assert_eq!(r.code(&["gen-data", "--config", &r.s("missing.json"), "--out", &r.s("x.gmf")]), 2);
    std::fs::write(r.p("bad.json"), "{\"data\": {}}").unwrap();
    assert_eq!(r.code(&["gen-data", "--config", &r.s("bad.json"), "--out", &r.s("x.gmf")]), 2);
    assert_eq!(r.code(&["gen-data", "--config", &c, "--out", &r.s("no/such/dir/x.gmf")]), 3);
    assert_eq!(r.code(&["frobnicate"]), 2);
}

#[test]
fn bank_commands() {
    let r = Run::new();
    let c = r.s("c.json");
    r.ok(&["gen-data", "--config", &c, "--out", &r.s("d.gmf")]);
    r.ok(&["build-bank", "--config", &c, "--features", &r.s("d.features.gmf"), "--out", &r.s("b.gmb")]);
    r.ok(&["decompose", "--bank", &r.s("b.gmb"), "--rank", "5", "--out", &r.s("b5.gmb")]);
    let text = r.ok(&["inspect", "--bank", &r.s("b5.gmb")]);
    let field = |t: &str, k: &str| -> String {
        t.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}: ")).map(str::to_string))
            .unwrap_or_else(|| panic!("no {k} in {t}"))
    };
    let (n, d, rank) = (600usize, 32usize, 5usize);
    assert_eq!(field(&text, "rank"), "5");
    assert_eq!(field(&text, "payload_bytes"), ((n * rank + d * rank + d + rank) * 8).to_string());
    assert_eq!(field(&text, "singular_values").split(' ').count(), 5);
    let file: u64 = field(&text, "file_bytes").parse().unwrap();
    assert_eq!(file, std::fs::metadata(r.p("b5.gmb")).unwrap().len());

    r.ok(&["decompose", "--bank", &r.s("b.gmb"), "--rank", "32", "--out", &r.s("bf.gmb")]);
    let text = r.ok(&["inspect", "--bank", &r.s("bf.gmb"), "--original", &r.s("b.gmb")]);
    let err: f64 = field(&text, "reconstruction_error").parse().unwrap();
    assert!(err <= 1e-10, "{err}");
    let full = r.ok(&["inspect", "--bank", &r.s("b.gmb")]);
    assert_eq!(field(&full, "payload_bytes"), (n * d * 8).to_string());

    assert_eq!(r.code(&["decompose", "--bank", &r.s("b.gmb"), "--rank", "0", "--out", &r.s("x.gmb")]), 2);
    assert_eq!(r.code(&["decompose", "--bank", &r.s("b.gmb"), "--rank", "33", "--out", &r.s("x.gmb")]), 2);
    assert_eq!(r.code(&["inspect", "--bank", &r.s("d.gmf")]), 3);
    assert_eq!(r.code(&["inspect", "--bank", &r.s("none.gmb")]), 3);
}

#[test]
fn per_mode_subsampling_flag() {
    let r = Run::new();
    let mut cfg = RunConfig::load(&r.p("c.json")).unwrap();
    cfg.bank.per_mode = Some(10);
    cfg.bank.subsample_seed = Some(4);
    r.write_config("sub.json", &cfg);
    let c = r.s("sub.json");
    r.ok(&["gen-data", "--config", &c, "--out", &r.s("d.gmf")]);
    assert_eq!(r.code(&["build-bank", "--config", &c, "--features", &r.s("d.features.gmf"), "--out", &r.s("b.gmb")]), 2);
    r.ok(&["build-bank", "--config", &c, "--features", &r.s("d.features.gmf"), "--points", &r.s("d.gmf"), "--out", &r.s("b.gmb")]);
    assert_eq!(formats::read_bank(&r.p("b.gmb")).unwrap().len(), 80);
    // A subsampled bank cannot be paired row-for-row with the data.
    assert_eq!(r.code(&["train", "--config", &c, "--data", &r.s("d.gmf"), "--bank", &r.s("b.gmb"), "--out-dir", &r.s("run")]), 2);
}

#[test]
fn train_smoke_resume_and_errors() {
    let r = Run::new().prepared();
    let c = r.s("c.json");
    assert!(r.p("run/ckpt_000100.gmc").exists());
    assert!(r.p("run/ckpt_000200.gmc").exists());
    assert!(r.p("run/final.gma").exists());
    let metrics = std::fs::read_to_string(r.p("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some(io::METRICS_HEADER));
    assert_eq!(metrics.lines().count(), 3);

    r.ok(&[
        "train", "--config", &c, "--data", &r.s("data.gmf"), "--bank", &r.s("dbank.gmb"),
        "--out-dir", &r.s("run2"), "--resume", &r.s("run/ckpt_000100.gmc"),
    ]);
    assert_eq!(std::fs::read(r.p("run/final.gmc")).unwrap(), std::fs::read(r.p("run2/final.gmc")).unwrap());
    assert_eq!(std::fs::read(r.p("run/final.gma")).unwrap(), std::fs::read(r.p("run2/final.gma")).unwrap());

    let bad = ["train", "--config", &c, "--data", &r.s("data.gmf"), "--bank", &r.s("dbank.gmb"), "--out-dir", &r.s("run3")];
    let mut missing = bad.to_vec();
    let nope = r.s("nope.gmc");
    missing.extend(["--resume", &nope]);
    assert_eq!(r.code(&missing), 3);

    let mut cfg = RunConfig::load(&r.p("c.json")).unwrap();
    cfg.train.lr = 1e250;
    r.write_config("diverge.json", &cfg);
    let out = r.gmem(&["train", "--config", &r.s("diverge.json"), "--data", &r.s("data.gmf"), "--bank", &r.s("dbank.gmb"), "--out-dir", &r.s("run4")]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step "));
}

#[test]
fn sampling_interpolation_and_injection() {
    let r = Run::new().prepared();
    let sample = |tail: &[&str]| {
        let args = r.with_model(&["sample"], tail);
        r.ok(&strs(&args));
    };
    sample(&["--snippet-index", "3", "--out", &r.s("i3.csv")]);
    sample(&["--snippet-index", "8", "--out", &r.s("i8.csv")]);
    sample(&["--snippet-index", "3", "--guidance", "1.0", "--out", &r.s("g1.csv")]);
    sample(&["--random", "--out", &r.s("rand.csv")]);
    sample(&["--random", "--out", &r.s("rand2.csv")]);
    assert_eq!(std::fs::read(r.p("i3.csv")).unwrap(), std::fs::read(r.p("g1.csv")).unwrap());
    assert_eq!(std::fs::read(r.p("rand.csv")).unwrap(), std::fs::read(r.p("rand2.csv")).unwrap());
    let prov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.p("i3.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["solver"], "euler");
    assert_eq!(prov["nfe"], 8);
    assert_eq!(prov["sample_seed"], 11);
    assert_eq!(prov["guidance"], 1.0);

    // alpha weights row i: 1 reproduces i, 0 reproduces j.
    let args = r.with_model(&["interpolate"], &["--i", "3", "--j", "8", "--alphas", "1,0", "--out", &r.s("ip.csv"), "--out-bank", &r.s("ip.gmb")]);
    r.ok(&strs(&args));
    let ip = points(&r.p("ip.csv"));
    let (a, b) = (points(&r.p("i3.csv")), points(&r.p("i8.csv")));
    assert_eq!(ip.rows(), 128);
    assert_eq!(&ip.data()[..128], a.data());
    assert_eq!(&ip.data()[128..], b.data());
    assert_eq!(formats::read_bank(&r.p("ip.gmb")).unwrap().len(), 602);
    let args = r.with_model(&["interpolate"], &["--i", "3", "--j", "8", "--out", &r.s("ip9.csv")]);
    r.ok(&strs(&args));
    assert_eq!(points(&r.p("ip9.csv")).rows(), 9 * 64);

    // Inject the raw (unnormalized) in-bank feature of row 3.
    let feats = formats::read_features(&r.p("data.features.gmf")).unwrap();
    let row3 = gmem_core::Matrix::from_rows(&[feats.row(3)]).unwrap();
    formats::write_features(&r.p("ext.gmf"), &row3).unwrap();
    r.ok(&[
        "inject", "--config", &r.s("c.json"), "--bank", &r.s("dbank.gmb"), "--features", &r.s("ext.gmf"),
        "--out-bank", &r.s("inj.gmb"), "--checkpoint", &r.s("run/final.gmc"), "--out", &r.s("inj.csv"),
    ]);
    assert_eq!(points(&r.p("inj.csv")).data(), a.data());
    let inj = formats::read_bank(&r.p("inj.gmb")).unwrap();
    assert_eq!(inj.len(), 601);
    match &inj {
        gmem_core::bank::Bank::Decomposed(d) => assert_eq!(d.coeff(600).unwrap(), d.coeff(3).unwrap()),
        _ => panic!("expected decomposed bank"),
    }

    // Encoder seed mismatch warns but proceeds.
    let mut cfg = RunConfig::load(&r.p("c.json")).unwrap();
    cfg.data.encoder_seed = 8;
    r.write_config("other.json", &cfg);
    let out = r.gmem(&["inject", "--config", &r.s("other.json"), "--bank", &r.s("dbank.gmb"), "--features", &r.s("ext.gmf"), "--out-bank", &r.s("inj2.gmb")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));

    let args = r.with_model(&["sample"], &["--snippet-index", "600", "--out", &r.s("x.csv")]);
    assert_eq!(r.code(&strs(&args)), 2);
    let args = r.with_model(&["interpolate"], &["--i", "3", "--j", "9999", "--out", &r.s("x.csv")]);
    assert_eq!(r.code(&strs(&args)), 2);
    assert_eq!(r.code(&["inject", "--config", &r.s("c.json"), "--bank", &r.s("bank.gmb"), "--features", &r.s("ext.gmf"), "--out-bank", &r.s("x.gmb")]), 2);
    let args = r.with_model(&["sample"], &["--guidance", "-1", "--out", &r.s("x.csv")]);
    assert_eq!(r.code(&strs(&args)), 2);
}

#[test]
fn eval_sweep_and_plot() {
    let r = Run::new().prepared();
    let c = r.s("c.json");
    let heldout = gmem::pipeline::heldout(&RunConfig::load(&r.p("c.json")).unwrap()).unwrap();
    formats::write_features(&r.p("ref.gmf"), &heldout).unwrap();
    r.ok(&["eval", "--config", &c, "--samples", &r.s("ref.gmf"), "--out", &r.s("self.csv")]);
    let text = std::fs::read_to_string(r.p("self.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(io::EVAL_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let frechet: f64 = row[4].parse().unwrap();
    assert!(frechet <= 1e-8, "{frechet}");
    assert_eq!(row[5], "NaN");

    let args = r.with_model(&["sample"], &["--out", &r.s("s.csv")]);
    r.ok(&strs(&args));
    let out = r.ok(&[
        "eval", "--config", &c, "--samples", &r.s("s.csv"), "--bank", &r.s("dbank.gmb"),
        "--checkpoint", &r.s("run/final.gmc"), "--out", &r.s("e.csv"),
    ]);
    assert!(out.contains("field_rmse"));
    let text = std::fs::read_to_string(r.p("e.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["8", "euler", "64"]);
    let fidelity: f64 = row[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&fidelity));
    let recall: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.p("e.recall.json")).unwrap()).unwrap();
    assert_eq!(recall[0]["mode_recall"].as_array().unwrap().len(), 8);

    let args = r.with_model(&["sweep-nfe"], &["--nfes", "10,25,50", "--count", "64", "--out", &r.s("sweep.csv")]);
    r.ok(&strs(&args));
    let sweep = std::fs::read_to_string(r.p("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    let nfes: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(nfes, ["10", "25", "50"]);
    r.ok(&strs(&r.with_model(&["sweep-nfe"], &["--nfes", "10,25,50", "--count", "64", "--out", &r.s("sweep2.csv")])));
    assert_eq!(sweep, std::fs::read_to_string(r.p("sweep2.csv")).unwrap());

    r.ok(&["plot", "--config", &c, "--samples", &r.s("s.csv"), "--out", &r.s("p.svg")]);
    let svg = std::fs::read_to_string(r.p("p.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(circles, 64);
    let means = doc.descendants().filter(|n| n.attribute("class") == Some("mode-mean")).count();
    assert_eq!(means, 8);
}
