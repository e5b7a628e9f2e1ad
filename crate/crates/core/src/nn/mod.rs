//! Two-hidden-layer tanh network with a policy head and two scalar value heads.
//!
//! Parameters live in one flat vector split into named segments, so optimisers,
//! snapshots and checkpoints all work on plain `Vec<f64>`. Gradients are written by hand
//! for the fixed set of losses in [`loss`].

mod adam;
mod checkpoint;
mod distribution;
pub mod loss;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use distribution::ActionDistribution;

use crate::env::ActionSpec;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} coordinates, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("distributions have different head kinds or widths")]
    HeadMismatch,
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Diagonal Gaussian with a state-independent log-std vector.
    Gaussian,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub output_dim: usize,
    pub head: HeadKind,
}

impl Architecture {
    pub fn for_action_space(input_dim: usize, action: &ActionSpec, hidden: [usize; 2]) -> Self {
        let head = match action {
            ActionSpec::Continuous { .. } => HeadKind::Gaussian,
            ActionSpec::Discrete { .. } => HeadKind::Categorical,
        };
        Self { input_dim, hidden, output_dim: action.head_width(), head }
    }

    /// Named segments in storage order: `(name, rows, cols)`.
    pub fn segments(&self) -> Vec<(&'static str, usize, usize)> {
        let [h1, h2] = self.hidden;
        let mut s = vec![
            ("trunk.0.weight", h1, self.input_dim),
            ("trunk.0.bias", h1, 1),
            ("trunk.1.weight", h2, h1),
            ("trunk.1.bias", h2, 1),
            ("policy.weight", self.output_dim, h2),
            ("policy.bias", self.output_dim, 1),
            ("value_ext.weight", 1, h2),
            ("value_ext.bias", 1, 1),
            ("value_int.weight", 1, h2),
            ("value_int.bias", 1, 1),
        ];
        if self.head == HeadKind::Gaussian {
            s.push(("log_std", self.output_dim, 1));
        }
        s
    }

    pub fn num_params(&self) -> usize {
        self.segments().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Offsets of each segment inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wp: usize,
    bp: usize,
    wve: usize,
    bve: usize,
    wvi: usize,
    bvi: usize,
    log_std: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offsets = arch.segments().into_iter().scan(0, |acc, (_, r, c)| {
            let start = *acc;
            *acc += r * c;
            Some(start)
        });
        let mut next = || offsets.next().unwrap_or(usize::MAX);
        Layout {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            wp: next(),
            bp: next(),
            wve: next(),
            bve: next(),
            wvi: next(),
            bvi: next(),
            log_std: next(),
        }
    }
}

/// Initialisation knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyInit {
    pub log_std: f64,
    pub hidden_gain: f64,
    pub policy_gain: f64,
    pub value_gain: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self { log_std: 0.0, hidden_gain: std::f64::consts::SQRT_2, policy_gain: 0.01, value_gain: 1.0 }
    }
}

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub dist: ActionDistribution,
    pub v_ext: f64,
    pub v_int: f64,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Trace {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub(crate) out: Forward,
}

/// Loss gradient with respect to the network outputs of one sample.
pub(crate) struct HeadGrad {
    /// ∂L/∂mean (Gaussian) or ∂L/∂logits (categorical).
    pub policy: Vec<f64>,
    /// ∂L/∂log σ; empty for categorical heads.
    pub log_std: Vec<f64>,
    pub v_ext: f64,
    pub v_int: f64,
}

impl HeadGrad {
    pub(crate) fn zeros(arch: &Architecture) -> Self {
        let ls = if arch.head == HeadKind::Gaussian { arch.output_dim } else { 0 };
        Self { policy: vec![0.0; arch.output_dim], log_std: vec![0.0; ls], v_ext: 0.0, v_int: 0.0 }
    }

    pub(crate) fn add_policy(&mut self, scale: f64, (dp, ds): &(Vec<f64>, Vec<f64>)) {
        for (g, d) in self.policy.iter_mut().zip(dp) {
            *g += scale * d;
        }
        for (g, d) in self.log_std.iter_mut().zip(ds) {
            *g += scale * d;
        }
    }
}

/// A stochastic policy with extrinsic and intrinsic value heads sharing one trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHandle {
    arch: Architecture,
    layout: Layout,
    params: Vec<f64>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let (r, c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let g = DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, rr) = (qr.q(), qr.r());
    // fix column signs so the distribution is uniform over orthogonal matrices
    for j in 0..c {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

impl PolicyHandle {
    pub fn new(arch: Architecture, init: &PolicyInit, rng: &mut impl rand::Rng) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; arch.num_params()];
        let [h1, h2] = arch.hidden;
        let blocks = [
            (layout.w1, h1, arch.input_dim, init.hidden_gain),
            (layout.w2, h2, h1, init.hidden_gain),
            (layout.wp, arch.output_dim, h2, init.policy_gain),
            (layout.wve, 1, h2, init.value_gain),
            (layout.wvi, 1, h2, init.value_gain),
        ];
        for (off, r, c, gain) in blocks {
            params[off..off + r * c].copy_from_slice(&orthogonal(r, c, gain, rng));
        }
        if arch.head == HeadKind::Gaussian {
            let ls = init.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
            params[layout.log_std..layout.log_std + arch.output_dim].fill(ls);
        }
        Self { arch, layout, params }
    }

    /// Wraps an existing parameter vector; log-std entries are clamped into range.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, NnError> {
        if params.len() != arch.num_params() {
            return Err(NnError::DimensionMismatch { expected: arch.num_params(), got: params.len() });
        }
        let layout = Layout::new(&arch);
        let mut p = Self { arch, layout, params };
        p.project();
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Copy of the parameters; restoring it with [`PolicyHandle::restore`] is bit-exact.
    pub fn snapshot(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn restore(&mut self, snapshot: &[f64]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot from a different architecture");
        self.params.copy_from_slice(snapshot);
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Clamps the Gaussian log-std segment into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn project(&mut self) {
        if self.arch.head == HeadKind::Gaussian {
            let o = self.layout.log_std;
            for v in &mut self.params[o..o + self.arch.output_dim] {
                *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
    }

    pub fn forward(&self, state: &[f64]) -> Result<Forward, NnError> {
        Ok(self.trace(state)?.out)
    }

    pub(crate) fn trace(&self, state: &[f64]) -> Result<Trace, NnError> {
        let a = &self.arch;
        if state.len() != a.input_dim {
            return Err(NnError::DimensionMismatch { expected: a.input_dim, got: state.len() });
        }
        let p = &self.params;
        let l = &self.layout;
        let [n1, n2] = a.hidden;
        let h1 = dense_tanh(&p[l.w1..l.w1 + n1 * a.input_dim], &p[l.b1..l.b1 + n1], state);
        let h2 = dense_tanh(&p[l.w2..l.w2 + n2 * n1], &p[l.b2..l.b2 + n2], &h1);
        let head = dense(&p[l.wp..l.wp + a.output_dim * n2], &p[l.bp..l.bp + a.output_dim], &h2);
        let v_ext = dot(&p[l.wve..l.wve + n2], &h2) + p[l.bve];
        let v_int = dot(&p[l.wvi..l.wvi + n2], &h2) + p[l.bvi];
        let dist = match a.head {
            HeadKind::Gaussian => ActionDistribution::Gaussian {
                mean: head,
                log_std: p[l.log_std..l.log_std + a.output_dim].to_vec(),
            },
            HeadKind::Categorical => ActionDistribution::from_logits(&head),
        };
        Ok(Trace { x: state.to_vec(), h1, h2, out: Forward { dist, v_ext, v_int } })
    }

    /// Accumulates `∂L/∂θ` for one sample into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, g: &HeadGrad, grad: &mut [f64]) {
        let a = &self.arch;
        let p = &self.params;
        let l = &self.layout;
        let [n1, n2] = a.hidden;
        let mut dh2 = vec![0.0; n2];
        for o in 0..a.output_dim {
            let go = g.policy[o];
            if go == 0.0 {
                continue;
            }
            let row = l.wp + o * n2;
            for j in 0..n2 {
                grad[row + j] += go * trace.h2[j];
                dh2[j] += p[row + j] * go;
            }
            grad[l.bp + o] += go;
        }
        for (w, b, gv) in [(l.wve, l.bve, g.v_ext), (l.wvi, l.bvi, g.v_int)] {
            if gv == 0.0 {
                continue;
            }
            for j in 0..n2 {
                grad[w + j] += gv * trace.h2[j];
                dh2[j] += p[w + j] * gv;
            }
            grad[b] += gv;
        }
        if a.head == HeadKind::Gaussian {
            for (i, gs) in g.log_std.iter().enumerate() {
                grad[l.log_std + i] += gs;
            }
        }
        let dz2: Vec<f64> = dh2.iter().zip(&trace.h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let mut dh1 = vec![0.0; n1];
        for i in 0..n2 {
            let gi = dz2[i];
            let row = l.w2 + i * n1;
            for j in 0..n1 {
                grad[row + j] += gi * trace.h1[j];
                dh1[j] += p[row + j] * gi;
            }
            grad[l.b2 + i] += gi;
        }
        for i in 0..n1 {
            let gi = dh1[i] * (1.0 - trace.h1[i] * trace.h1[i]);
            let row = l.w1 + i * a.input_dim;
            for (j, x) in trace.x.iter().enumerate() {
                grad[row + j] += gi * x;
            }
            grad[l.b1 + i] += gi;
        }
    }

    /// Index range of a named segment in the flat parameter vector.
    pub fn segment_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for (n, r, c) in self.arch.segments() {
            if n == name {
                return Some(off..off + r * c);
            }
            off += r * c;
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter().enumerate().map(|(i, bi)| bi + dot(&w[i * n..(i + 1) * n], x)).collect()
}

fn dense_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = dense(w, b, x);
    h.iter_mut().for_each(|v| *v = v.tanh());
    h
}
