//! CSV and JSON outputs: samples, provenance, training metrics, evaluation.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use gmem_core::eval::EvalReport;
use gmem_core::solver::{Generated, SnippetRef};
use gmem_core::train::StepMetrics;
use gmem_core::Matrix;

use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// `"17"` for an index, `"c:0.1;-0.25"` for a coefficient vector. Values use
/// shortest round-trip formatting, so parsing gives back the same bits.
pub fn format_ref(r: &SnippetRef) -> String {
    match r {
        SnippetRef::Index(i) => i.to_string(),
        SnippetRef::Coefficients(c) => {
            let parts: Vec<String> = c.iter().map(f64::to_string).collect();
            format!("c:{}", parts.join(";"))
        }
    }
}

pub fn parse_ref(s: &str) -> Option<SnippetRef> {
    if let Some(rest) = s.strip_prefix("c:") {
        if rest.is_empty() {
            return Some(SnippetRef::Coefficients(Vec::new()));
        }
        let c = rest.split(';').map(str::parse).collect::<std::result::Result<Vec<f64>, _>>().ok()?;
        Some(SnippetRef::Coefficients(c))
    } else {
        s.parse().ok().map(SnippetRef::Index)
    }
}

pub fn write_samples(path: &Path, samples: &[Generated], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..dim).map(|j| format!("dim_{j}")).collect();
    header.push("snippet_ref".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in samples {
        if s.point.len() != dim {
            return Err(gmem_core::Error::DimensionMismatch {
                expected: dim,
                got: s.point.len(),
            }
            .into());
        }
        let mut rec: Vec<String> = s.point.iter().map(f64::to_string).collect();
        rec.push(format_ref(&s.snippet));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sample points plus their snippet references (when the file has them).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub points: Matrix,
    pub refs: Option<Vec<SnippetRef>>,
}

impl SampleFile {
    /// Rebuild generated records; `None` without a snippet_ref column.
    pub fn generated(&self) -> Option<Vec<Generated>> {
        let refs = self.refs.as_ref()?;
        Some(
            self.points
                .row_iter()
                .zip(refs)
                .map(|(p, r)| Generated {
                    point: p.to_vec(),
                    snippet: r.clone(),
                })
                .collect(),
        )
    }
}

pub fn read_samples(path: &Path) -> Result<SampleFile> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = header.iter().take_while(|h| h.starts_with("dim_")).count();
    let has_refs = match header.len() - dim {
        0 => false,
        1 if &header[dim] == "snippet_ref" => true,
        _ => return Err(Error::format(path, "expected columns dim_0.., snippet_ref")),
    };
    if dim == 0 {
        return Err(Error::format(path, "no dim_ columns"));
    }
    let mut points = Matrix::zeros(0, dim);
    let mut refs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = (0..dim)
            .map(|j| rec[j].parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        points.push_row(&row)?;
        if has_refs {
            let sr = parse_ref(&rec[dim])
                .ok_or_else(|| Error::format(path, format!("row {}: bad snippet_ref", line + 1)))?;
            refs.push(sr);
        }
    }
    Ok(SampleFile {
        points,
        refs: has_refs.then_some(refs),
    })
}

/// `x.csv` → `x.provenance.json`.
pub fn provenance_path(samples: &Path) -> PathBuf {
    samples.with_extension("provenance.json")
}

/// `x.csv` → `x.recall.json`.
pub fn recall_path(report: &Path) -> PathBuf {
    report.with_extension("recall.json")
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const METRICS_HEADER: &str = "step,loss,flow_loss,align_loss,grad_norm";

/// Averages step metrics over a window and appends one CSV row per window.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
    sum: [f64; 4],
    count: u64,
}

impl MetricsLog {
    /// Appends to an existing log (resumed runs) or starts a new one.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = path.exists();
        let file = if append && exists {
            OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            file,
            sum: [0.0; 4],
            count: 0,
        };
        if !(append && exists) {
            writeln!(log.file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(log)
    }

    pub fn record(&mut self, m: &StepMetrics) {
        for (s, v) in self.sum.iter_mut().zip([m.loss, m.flow_loss, m.align_loss, m.grad_norm]) {
            *s += v;
        }
        self.count += 1;
    }

    /// Writes the window mean labelled with `step`; returns the mean loss.
    pub fn flush(&mut self, step: u64) -> Result<Option<f64>> {
        if self.count == 0 {
            return Ok(None);
        }
        let n = self.count as f64;
        let [l, f, a, g] = self.sum.map(|s| s / n);
        writeln!(self.file, "{step},{l},{f},{a},{g}").map_err(|e| Error::io(&self.path, e))?;
        self.sum = [0.0; 4];
        self.count = 0;
        Ok(Some(l))
    }
}

pub const EVAL_HEADER: &str = "nfe,solver,n,mmd2,frechet,mode_fidelity";

pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(EVAL_HEADER.split(',')).map_err(|e| csv_err(path, e))?;
    for r in reports {
        w.write_record([
            r.nfe.to_string(),
            r.solver.to_string(),
            r.n.to_string(),
            r.mmd2.to_string(),
            r.frechet.to_string(),
            r.mode_fidelity.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-mode recall keyed by NFE; modes with no conditioned samples are null.
pub fn recall_json(reports: &[EvalReport]) -> serde_json::Value {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "nfe": r.nfe,
                "solver": r.solver,
                "bandwidth": r.bandwidth,
                "field_rmse": r.field_rmse,
                "mode_recall": r.mode_recall,
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refs_round_trip() {
        for r in [
            SnippetRef::Index(0),
            SnippetRef::Index(19_999),
            SnippetRef::Coefficients(vec![0.1, -1.0 / 3.0, 1e-300, -0.0]),
        ] {
            assert_eq!(parse_ref(&format_ref(&r)), Some(r));
        }
        assert_eq!(parse_ref("x"), None);
        assert_eq!(parse_ref("c:1;z"), None);
    }

    #[test]
    fn samples_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let samples = vec![
            Generated {
                point: vec![0.1 + 0.2, -7.25e-17],
                snippet: SnippetRef::Index(3),
            },
            Generated {
                point: vec![f64::MAX, 1.0 / 3.0],
                snippet: SnippetRef::Coefficients(vec![0.5, 2.0 / 3.0]),
            },
        ];
        write_samples(&p, &samples, 2).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("dim_0,dim_1,snippet_ref\n"));
        let back = read_samples(&p).unwrap();
        assert_eq!(back.generated().unwrap(), samples);
    }

    #[test]
    fn metrics_window_means() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut log = MetricsLog::open(&p, false).unwrap();
        for l in [1.0, 3.0] {
            log.record(&StepMetrics {
                loss: l,
                flow_loss: l,
                align_loss: 0.0,
                grad_norm: 2.0 * l,
            });
        }
        assert_eq!(log.flush(2).unwrap(), Some(2.0));
        assert_eq!(log.flush(3).unwrap(), None);
        drop(log);
        let mut log = MetricsLog::open(&p, true).unwrap();
        log.record(&StepMetrics {
            loss: 5.0,
            flow_loss: 5.0,
            align_loss: 0.0,
            grad_norm: 1.0,
        });
        log.flush(3).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n2,2,2,0,4\n3,5,5,0,1\n"));
    }
}
