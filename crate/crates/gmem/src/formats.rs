//! Little-endian binary formats.
//!
//! * `.gmf` features: `"GMFT"`, u8 version, 3 reserved bytes, u64 N, u64 d,
//!   then N·d f64 row-major.
//! * `.gmb` banks: `"GMEM"`, u8 version, u8 mode (0 full, 1 decomposed),
//!   u16 reserved, u64 encoder_seed, u64 N, u64 d, u64 r (0 when full), then
//!   either snippets[N×d] or μ[d], S[r], B[d×r], C[N×r].
//! * `.gmc` checkpoints: `"GMCK"`, u8 version, 3 reserved bytes, a config
//!   block (u64 data_dim, snippet_dim, time_dim, proj_hidden, trunk length,
//!   each trunk width, seed), u64 parameter count, then the parameters.
//! * `.gma` optimizer state: `"GMAD"`, u8 version, 3 reserved bytes, u64
//!   step, u64 n, then m[n] and v[n].

use std::fs;
use std::path::Path;

use gmem_core::bank::{Bank, DecomposedBank, MemoryBank};
use gmem_core::net::{NetConfig, VelocityNet};
use gmem_core::train::AdamState;
use gmem_core::Matrix;

use crate::error::{Error, Result};

pub const VERSION: u8 = 1;
const FEATURE_MAGIC: &[u8; 4] = b"GMFT";
const BANK_MAGIC: &[u8; 4] = b"GMEM";
const CKPT_MAGIC: &[u8; 4] = b"GMCK";
const ADAM_MAGIC: &[u8; 4] = b"GMAD";
/// Fixed header length of a `.gmb` file.
pub const BANK_HEADER_BYTES: usize = 4 + 1 + 1 + 2 + 8 * 4;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.0.reserve(vs.len() * 8);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn header(&mut self, magic: &[u8; 4]) {
        self.bytes(magic);
        self.bytes(&[VERSION, 0, 0, 0]);
    }

    fn save(self, path: &Path) -> Result<()> {
        fs::write(path, self.0).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, buf, pos: 0 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("size {v} too large")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.path, "size overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(self.path, "size overflow"))?;
        let data = self.f64s(n)?;
        Matrix::new(rows, cols, data).map_err(|e| self.bad(e))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic bytes"));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u8()?;
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        self.magic(magic)?;
        self.version()?;
        self.take(3)?;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }

    fn bad(&self, e: gmem_core::Error) -> Error {
        Error::format(self.path, e.to_string())
    }
}

pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = Writer::default();
    w.header(FEATURE_MAGIC);
    w.usize(m.rows());
    w.usize(m.cols());
    w.f64s(m.data());
    w.save(path)
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut r = Reader::open(path)?;
    r.header(FEATURE_MAGIC)?;
    let n = r.usize()?;
    let d = r.usize()?;
    let m = r.matrix(n, d)?;
    r.finish()?;
    Ok(m)
}

pub fn write_bank(path: &Path, bank: &Bank) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(BANK_MAGIC);
    match bank {
        Bank::Full(b) => {
            w.bytes(&[VERSION, 0, 0, 0]);
            w.u64(b.encoder_seed());
            w.usize(b.len());
            w.usize(b.dim());
            w.u64(0);
            w.f64s(b.snippets().data());
        }
        Bank::Decomposed(b) => {
            w.bytes(&[VERSION, 1, 0, 0]);
            w.u64(b.encoder_seed());
            w.usize(b.len());
            w.usize(b.dim());
            w.usize(b.rank());
            w.f64s(b.mean());
            w.f64s(b.singular_values());
            w.f64s(b.basis().data());
            w.f64s(b.coeffs().data());
        }
    }
    w.save(path)
}

pub fn read_bank(path: &Path) -> Result<Bank> {
    let mut r = Reader::open(path)?;
    r.magic(BANK_MAGIC)?;
    r.version()?;
    let mode = r.u8()?;
    r.take(2)?;
    let seed = r.u64()?;
    let n = r.usize()?;
    let d = r.usize()?;
    let rank = r.usize()?;
    let bank = match mode {
        0 => {
            if rank != 0 {
                return Err(Error::format(path, "full bank with nonzero rank"));
            }
            let snippets = r.matrix(n, d)?;
            Bank::Full(MemoryBank::from_snippets(snippets, seed).map_err(|e| r.bad(e))?)
        }
        1 => {
            let mean = r.f64s(d)?;
            let singular = r.f64s(rank)?;
            let basis = r.matrix(d, rank)?;
            let coeffs = r.matrix(n, rank)?;
            Bank::Decomposed(DecomposedBank::from_parts(mean, singular, basis, coeffs, seed).map_err(|e| r.bad(e))?)
        }
        m => return Err(Error::format(path, format!("unknown bank mode {m}"))),
    };
    r.finish()?;
    Ok(bank)
}

/// Closed-form `.gmb` payload size in bytes (excluding the header).
pub fn bank_payload_bytes(bank: &Bank) -> usize {
    bank.payload_bytes()
}

pub fn write_checkpoint(path: &Path, net: &VelocityNet) -> Result<()> {
    let cfg = net.config();
    let mut w = Writer::default();
    w.header(CKPT_MAGIC);
    for v in [cfg.data_dim, cfg.snippet_dim, cfg.time_dim, cfg.proj_hidden, cfg.trunk.len()] {
        w.usize(v);
    }
    for &h in &cfg.trunk {
        w.usize(h);
    }
    w.u64(cfg.seed);
    w.usize(net.param_count());
    w.f64s(net.params());
    w.save(path)
}

pub fn read_checkpoint(path: &Path) -> Result<VelocityNet> {
    let mut r = Reader::open(path)?;
    r.header(CKPT_MAGIC)?;
    let data_dim = r.usize()?;
    let snippet_dim = r.usize()?;
    let time_dim = r.usize()?;
    let proj_hidden = r.usize()?;
    let depth = r.usize()?;
    if depth > 1024 {
        return Err(Error::format(path, format!("implausible trunk depth {depth}")));
    }
    let trunk = (0..depth).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let cfg = NetConfig {
        data_dim,
        snippet_dim,
        time_dim,
        proj_hidden,
        trunk,
        seed,
    };
    let count = r.usize()?;
    let params = r.f64s(count)?;
    r.finish()?;
    VelocityNet::from_params(cfg, params).map_err(|e| r.bad(e))
}

pub fn write_adam(path: &Path, state: &AdamState) -> Result<()> {
    let mut w = Writer::default();
    w.header(ADAM_MAGIC);
    w.u64(state.step);
    w.usize(state.m.len());
    w.f64s(&state.m);
    w.f64s(&state.v);
    w.save(path)
}

pub fn read_adam(path: &Path) -> Result<AdamState> {
    let mut r = Reader::open(path)?;
    r.header(ADAM_MAGIC)?;
    let step = r.u64()?;
    let n = r.usize()?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    r.finish()?;
    Ok(AdamState { m, v, step })
}

/// Optimizer state path paired with a checkpoint: `x.gmc` → `x.gma`.
pub fn adam_path(ckpt: &Path) -> std::path::PathBuf {
    ckpt.with_extension("gma")
}
