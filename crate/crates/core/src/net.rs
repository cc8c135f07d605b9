//! Snippet-conditioned velocity network `v_θ(x_t, s, t)`.
//!
//! The snippet passes through a three-layer SiLU projector; its output is
//! concatenated with `x_t` and a sinusoidal time embedding and fed to a
//! SiLU MLP trunk with a linear output layer. A linear alignment head reads
//! one trunk hidden layer (the second, or the only one) and maps it to the
//! snippet dimension for the representation-alignment loss.
//!
//! Parameters live in one flat `f64` vector; gradients are computed by hand
//! and returned in the same layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::par;
use crate::rng::Rng;

/// Samples per gradient shard. The shard partition depends only on the
/// batch size, so sharded reductions are reproducible at any thread count.
pub const SHARD: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub data_dim: usize,
    pub snippet_dim: usize,
    pub time_dim: usize,
    pub proj_hidden: usize,
    pub trunk: Vec<usize>,
    pub seed: u64,
}

impl NetConfig {
    /// Trunk `(128, 128, 128)`, time embedding 16, projector width 64.
    pub fn with_defaults(data_dim: usize, snippet_dim: usize, seed: u64) -> Self {
        Self {
            data_dim,
            snippet_dim,
            time_dim: 16,
            proj_hidden: 64,
            trunk: vec![128, 128, 128],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.data_dim, self.snippet_dim, self.time_dim, self.proj_hidden];
        if dims.contains(&0) || self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(Error::InvalidConfig(
                "network dimensions must be positive with at least one trunk layer".into(),
            ));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig("time embedding dimension must be even".into()));
        }
        Ok(())
    }

    /// Index of the trunk layer read by the alignment head.
    pub fn align_layer(&self) -> usize {
        1.min(self.trunk.len() - 1)
    }

    fn trunk_input(&self) -> usize {
        self.data_dim + self.time_dim + self.proj_hidden
    }
}

/// `E/2` (sin, cos) pairs with frequencies geometric from 1 to 1000.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig("time embedding dimension must be even".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { name: "t", value: t });
    }
    let pairs = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..pairs {
        let freq = if pairs > 1 {
            libm::pow(1000.0, i as f64 / (pairs - 1) as f64)
        } else {
            1.0
        };
        out.push(libm::sin(freq * t));
        out.push(libm::cos(freq * t));
    }
    Ok(out)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    input: usize,
    output: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    fn size(&self) -> usize {
        self.output * (self.input + 1)
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.weight..self.weight + self.input * self.output];
        let b = &params[self.bias..self.bias + self.output];
        for (row, bias) in w.chunks_exact(self.input).zip(b) {
            out.push(bias + linalg::dot(row, x));
        }
    }

    /// Accumulate parameter gradients for upstream gradient `g_out` and,
    /// if requested, add the input gradient into `g_in`.
    fn backward(&self, params: &[f64], grad: &mut [f64], x: &[f64], g_out: &[f64], mut g_in: Option<&mut [f64]>) {
        for (o, &g) in g_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let w0 = self.weight + o * self.input;
            linalg::axpy(g, x, &mut grad[w0..w0 + self.input]);
            grad[self.bias + o] += g;
            if let Some(gi) = g_in.as_deref_mut() {
                linalg::axpy(g, &params[w0..w0 + self.input], gi);
            }
        }
    }
}

/// Named contiguous parameter range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    proj: [Linear; 3],
    trunk: Vec<Linear>,
    out: Linear,
    head: Linear,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut offset = 0;
        let mut lin = |input: usize, output: usize| {
            let l = Linear {
                input,
                output,
                weight: offset,
                bias: offset + input * output,
            };
            offset += l.size();
            l
        };
        let p = cfg.proj_hidden;
        let proj = [lin(cfg.snippet_dim, p), lin(p, p), lin(p, p)];
        let mut trunk = Vec::with_capacity(cfg.trunk.len());
        let mut prev = cfg.trunk_input();
        for &w in &cfg.trunk {
            trunk.push(lin(prev, w));
            prev = w;
        }
        let out = lin(prev, cfg.data_dim);
        let head = lin(cfg.trunk[cfg.align_layer()], cfg.snippet_dim);
        Self {
            proj,
            trunk,
            out,
            head,
            total: offset,
        }
    }
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct Trace {
    proj_pre: [Vec<f64>; 2],
    proj_act: [Vec<f64>; 2],
    trunk_in: Vec<f64>,
    trunk_pre: Vec<Vec<f64>>,
    trunk_act: Vec<Vec<f64>>,
    velocity: Vec<f64>,
}

/// Output of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub velocity: Vec<f64>,
    /// Activation of the trunk layer read by the alignment head.
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    cfg: NetConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl VelocityNet {
    /// He-normal weights (`N(0, 2/fan_in)`), zero biases, output layer
    /// weights scaled by 0.01. Deterministic in `cfg.seed`.
    pub fn init(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = Rng::new(cfg.seed);
        let layers = layout
            .proj
            .iter()
            .chain(&layout.trunk)
            .map(|l| (l, 1.0))
            .chain([(&layout.out, 0.01), (&layout.head, 1.0)]);
        for (l, scale) in layers {
            let std = libm::sqrt(2.0 / l.input as f64) * scale;
            for w in &mut params[l.weight..l.weight + l.input * l.output] {
                *w = std * rng.normal();
            }
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn from_params(cfg: NetConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch {
                expected: layout.total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Parameter ranges in storage order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut push = |name: String, l: &Linear| {
            out.push(Segment {
                name: alloc::format!("{name}.weight"),
                offset: l.weight,
                len: l.input * l.output,
            });
            out.push(Segment {
                name: alloc::format!("{name}.bias"),
                offset: l.bias,
                len: l.output,
            });
        };
        for (i, l) in self.layout.proj.iter().enumerate() {
            push(alloc::format!("proj{i}"), l);
        }
        for (i, l) in self.layout.trunk.iter().enumerate() {
            push(alloc::format!("trunk{i}"), l);
        }
        push("out".into(), &self.layout.out);
        push("align_head".into(), &self.layout.head);
        out
    }

    fn check_inputs(&self, x: &[f64], s: &[f64], t: f64) -> Result<()> {
        if x.len() != self.cfg.data_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.data_dim,
                got: x.len(),
            });
        }
        if s.len() != self.cfg.snippet_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.snippet_dim,
                got: s.len(),
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange { name: "t", value: t });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], s: &[f64], t: f64) -> Result<Trace> {
        self.check_inputs(x, s, t)?;
        let p = &self.params;
        let l = &self.layout;
        let mut tr = Trace::default();

        let mut pre = Vec::new();
        l.proj[0].forward(p, s, &mut pre);
        tr.proj_act[0] = pre.iter().map(|&v| silu(v)).collect();
        tr.proj_pre[0] = core::mem::take(&mut pre);
        l.proj[1].forward(p, &tr.proj_act[0], &mut pre);
        tr.proj_act[1] = pre.iter().map(|&v| silu(v)).collect();
        tr.proj_pre[1] = core::mem::take(&mut pre);

        let mut z = Vec::with_capacity(self.cfg.trunk_input());
        z.extend_from_slice(x);
        z.extend(time_embed(t, self.cfg.time_dim)?);
        let mut projected = Vec::new();
        l.proj[2].forward(p, &tr.proj_act[1], &mut projected);
        z.extend_from_slice(&projected);
        tr.trunk_in = z;

        for (i, layer) in l.trunk.iter().enumerate() {
            let input = if i == 0 { &tr.trunk_in } else { &tr.trunk_act[i - 1] };
            let mut pre = Vec::new();
            layer.forward(p, input, &mut pre);
            tr.trunk_act.push(pre.iter().map(|&v| silu(v)).collect());
            tr.trunk_pre.push(pre);
        }
        l.out.forward(p, tr.trunk_act.last().expect("trunk is non-empty"), &mut tr.velocity);

        if tr.velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                layer: first_non_finite_layer(&tr),
            });
        }
        Ok(tr)
    }

    pub fn forward(&self, x: &[f64], s: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.trace(x, s, t)?.velocity)
    }

    pub fn forward_with_hidden(&self, x: &[f64], s: &[f64], t: f64) -> Result<Forward> {
        let mut tr = self.trace(x, s, t)?;
        let hidden = core::mem::take(&mut tr.trunk_act[self.cfg.align_layer()]);
        Ok(Forward {
            velocity: tr.velocity,
            hidden,
        })
    }

    /// One forward per row.
    pub fn forward_batch(&self, x: &Matrix, s: &Matrix, t: &[f64]) -> Result<Matrix> {
        check_batch(x, s, t)?;
        let mut out = Matrix::zeros(0, self.cfg.data_dim);
        for (i, &ti) in t.iter().enumerate() {
            out.push_row(&self.forward(x.row(i), s.row(i), ti)?)?;
        }
        Ok(out)
    }

    /// Alignment head applied to a hidden activation.
    pub fn align_project(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        let head = &self.layout.head;
        if hidden.len() != head.input {
            return Err(Error::DimensionMismatch {
                expected: head.input,
                got: hidden.len(),
            });
        }
        let mut out = Vec::new();
        head.forward(&self.params, hidden, &mut out);
        Ok(out)
    }

    /// Mean over the batch of `‖v_θ − target‖²` plus
    /// `align_weight ×` the mean cosine alignment loss, with the exact gradient.
    ///
    /// Samples are processed in fixed shards of [`SHARD`]; shard partial sums
    /// are combined in shard order.
    pub fn loss_and_grad(&self, batch: &TrainBatch, align_weight: f64) -> Result<LossGrad> {
        batch.validate(self)?;
        let use_align = align_weight != 0.0;
        if use_align && batch.align_targets.is_none() {
            return Err(Error::InvalidConfig("alignment weight set without targets".into()));
        }
        let n = batch.len();
        let inv = 1.0 / n as f64;
        let shards = n.div_ceil(SHARD);
        let partials = par::map_indexed(shards, |k| {
            let lo = k * SHARD;
            let hi = (lo + SHARD).min(n);
            self.shard_grad(batch, lo..hi, inv, if use_align { align_weight } else { 0.0 })
        });
        let mut out = LossGrad {
            loss: 0.0,
            flow_loss: 0.0,
            align_loss: 0.0,
            grad: vec![0.0; self.layout.total],
        };
        for part in partials {
            let part = part?;
            out.flow_loss += part.flow_loss;
            out.align_loss += part.align_loss;
            linalg::axpy(1.0, &part.grad, &mut out.grad);
        }
        out.flow_loss *= inv;
        out.align_loss *= inv;
        out.loss = out.flow_loss + if use_align { align_weight * out.align_loss } else { 0.0 };
        Ok(out)
    }

    /// Partial sums over `range`: unnormalized losses, gradient already scaled by `inv`.
    fn shard_grad(&self, batch: &TrainBatch, range: core::ops::Range<usize>, inv: f64, align_weight: f64) -> Result<LossGrad> {
        let p = &self.params;
        let l = &self.layout;
        let align_at = self.cfg.align_layer();
        let mut grad = vec![0.0; l.total];
        let (mut flow, mut align) = (0.0, 0.0);

        for i in range {
            let tr = self.trace(batch.x_t.row(i), batch.snippets.row(i), batch.t[i])?;
            let target = batch.targets.row(i);
            let mut g_v = Vec::with_capacity(tr.velocity.len());
            for (v, y) in tr.velocity.iter().zip(target) {
                let r = v - y;
                flow += r * r;
                g_v.push(2.0 * r * inv);
            }

            let last = tr.trunk_act.len() - 1;
            let mut g_h = vec![0.0; l.out.input];
            l.out.backward(p, &mut grad, &tr.trunk_act[last], &g_v, Some(&mut g_h));

            let mut g_head_in = None;
            if align_weight != 0.0 {
                let targets = batch.align_targets.as_ref().expect("checked by caller");
                let hidden = &tr.trunk_act[align_at];
                let mut z = Vec::new();
                l.head.forward(p, hidden, &mut z);
                let (loss, g_z) = cosine_loss_grad(&z, targets.row(i))?;
                align += loss;
                let g_z: Vec<f64> = g_z.iter().map(|g| g * align_weight * inv).collect();
                let mut g_hidden = vec![0.0; l.head.input];
                l.head.backward(p, &mut grad, hidden, &g_z, Some(&mut g_hidden));
                g_head_in = Some(g_hidden);
            }

            for k in (0..l.trunk.len()).rev() {
                if k == align_at {
                    if let Some(extra) = &g_head_in {
                        linalg::axpy(1.0, extra, &mut g_h);
                    }
                }
                let g_pre: Vec<f64> = g_h
                    .iter()
                    .zip(&tr.trunk_pre[k])
                    .map(|(g, &z)| g * silu_grad(z))
                    .collect();
                let input = if k == 0 { &tr.trunk_in } else { &tr.trunk_act[k - 1] };
                let mut g_in = vec![0.0; l.trunk[k].input];
                l.trunk[k].backward(p, &mut grad, input, &g_pre, Some(&mut g_in));
                g_h = g_in;
            }

            // Trunk input is [x, time embedding, projected snippet].
            let g_proj = &g_h[self.cfg.data_dim + self.cfg.time_dim..];
            let mut g_a = vec![0.0; l.proj[2].input];
            l.proj[2].backward(p, &mut grad, &tr.proj_act[1], g_proj, Some(&mut g_a));
            for k in (0..2).rev() {
                let g_pre: Vec<f64> = g_a
                    .iter()
                    .zip(&tr.proj_pre[k])
                    .map(|(g, &z)| g * silu_grad(z))
                    .collect();
                let input = if k == 0 { batch.snippets.row(i) } else { &tr.proj_act[0][..] };
                if k == 0 {
                    l.proj[0].backward(p, &mut grad, input, &g_pre, None);
                } else {
                    let mut g_in = vec![0.0; l.proj[k].input];
                    l.proj[k].backward(p, &mut grad, input, &g_pre, Some(&mut g_in));
                    g_a = g_in;
                }
            }
        }
        Ok(LossGrad {
            loss: 0.0,
            flow_loss: flow,
            align_loss: align,
            grad,
        })
    }

    /// Mean cosine alignment loss of the head applied to `hidden` rows.
    pub fn alignment_loss(&self, hidden: &Matrix, targets: &Matrix) -> Result<f64> {
        if hidden.rows() != targets.rows() {
            return Err(Error::DimensionMismatch {
                expected: hidden.rows(),
                got: targets.rows(),
            });
        }
        if hidden.rows() == 0 {
            return Err(Error::Empty("alignment batch"));
        }
        let mut total = 0.0;
        for (h, y) in hidden.row_iter().zip(targets.row_iter()) {
            total += cosine_loss_grad(&self.align_project(h)?, y)?.0;
        }
        Ok(total / hidden.rows() as f64)
    }
}

fn first_non_finite_layer(tr: &Trace) -> usize {
    let layers = tr
        .proj_pre
        .iter()
        .chain(core::iter::once(&tr.trunk_in))
        .chain(&tr.trunk_pre)
        .chain(core::iter::once(&tr.velocity));
    layers
        .enumerate()
        .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
        .map_or(0, |(i, _)| i)
}

/// `1 − cos(z, y)` and its gradient with respect to `z`.
pub fn cosine_loss_grad(z: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: z.len(),
        });
    }
    let nz = linalg::norm(z);
    let ny = linalg::norm(y);
    if nz < 1e-12 || ny < 1e-12 {
        return Err(Error::Degenerate("zero-norm vector in alignment loss"));
    }
    let cos = linalg::dot(z, y) / (nz * ny);
    let grad = z
        .iter()
        .zip(y)
        .map(|(zi, yi)| -(yi / (nz * ny) - cos * zi / (nz * nz)))
        .collect();
    Ok((1.0 - cos, grad))
}

fn check_batch(x: &Matrix, s: &Matrix, t: &[f64]) -> Result<()> {
    if s.rows() != x.rows() || t.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: if s.rows() != x.rows() { s.rows() } else { t.len() },
        });
    }
    Ok(())
}

/// One regression batch: inputs, conditioning snippets, times and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x_t: Matrix,
    pub snippets: Matrix,
    pub t: Vec<f64>,
    pub targets: Matrix,
    /// Encoder features the alignment head should match.
    pub align_targets: Option<Matrix>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.x_t.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, net: &VelocityNet) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        check_batch(&self.x_t, &self.snippets, &self.t)?;
        let cfg = net.config();
        let checks = [
            (self.x_t.cols(), cfg.data_dim),
            (self.snippets.cols(), cfg.snippet_dim),
            (self.targets.cols(), cfg.data_dim),
            (self.targets.rows(), self.len()),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if let Some(a) = &self.align_targets {
            if a.rows() != self.len() || a.cols() != cfg.snippet_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.len() * cfg.snippet_dim,
                    got: a.rows() * a.cols(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// `flow_loss + align_weight · align_loss`.
    pub loss: f64,
    pub flow_loss: f64,
    pub align_loss: f64,
    pub grad: Vec<f64>,
}

/// Flow-matching loss and gradient only.
pub fn backward(net: &VelocityNet, batch: &TrainBatch) -> Result<(f64, Vec<f64>)> {
    let lg = net.loss_and_grad(batch, 0.0)?;
    Ok((lg.loss, lg.grad))
}
