//! Dense feed-forward networks with hand-written reverse mode.
//!
//! Hidden layers use `tanh`. The output layer is affine followed by a
//! per-output squashing [`Head`]. Gradients are exact with respect to both
//! the parameters and the input; the input gradient is what the actor
//! updates need for `dQ/da`.
//!
//! Parameters live in one flat [`ParamVector`] laid out layer by layer,
//! weights (row-major, `out x in`) before biases.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy_opt::{ParamLayout, ParamVector};

const MAGIC: &[u8; 8] = b"OPGDNN01";

/// Relative-error threshold of [`grad_check`].
pub const GRAD_CHECK_TOL: f64 = 1e-5;
/// Central-difference step of [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid network: {0}")]
    InvalidNet(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("bad parameter file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Squashing applied to one output unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    /// range [-1, 1]
    Tanh,
    /// logistic, range [0, 1]
    UnitInterval,
}

impl Head {
    /// Closed output range, if bounded.
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            Head::Identity => None,
            Head::Tanh => Some((-1.0, 1.0)),
            Head::UnitInterval => Some((0.0, 1.0)),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Head::Identity => z,
            Head::Tanh => z.tanh(),
            Head::UnitInterval => 1.0 / (1.0 + (-z).exp()),
        }
    }

    // derivative expressed through the output y
    fn slope(self, y: f64) -> f64 {
        match self {
            Head::Identity => 1.0,
            Head::Tanh => 1.0 - y * y,
            Head::UnitInterval => y * (1.0 - y),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Head::Identity => 0,
            Head::Tanh => 1,
            Head::UnitInterval => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Head::Identity),
            1 => Some(Head::Tanh),
            2 => Some(Head::UnitInterval),
            _ => None,
        }
    }
}

/// Parameter and input gradients of `upstream . output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ParamVector,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    heads: Vec<Head>,
    params: ParamVector,
    // start of each layer's weight block
    offsets: Vec<usize>,
}

fn layout_for(sizes: &[usize]) -> ParamLayout {
    ParamLayout::new(sizes.windows(2).enumerate().flat_map(|(i, w)| {
        [
            (format!("layer{i}.weight"), w[0] * w[1]),
            (format!("layer{i}.bias"), w[1]),
        ]
    }))
}

impl DenseNet {
    /// Zero-initialised network.
    pub fn zeros(sizes: &[usize], heads: &[Head]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::InvalidNet(format!(
                "need at least two positive layer sizes, got {sizes:?}"
            )));
        }
        let n_out = *sizes.last().expect("checked above");
        if heads.len() != n_out {
            return Err(NnError::ShapeMismatch {
                expected: n_out,
                actual: heads.len(),
            });
        }
        let layout = Arc::new(layout_for(sizes));
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut at = 0;
        for w in sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            heads: heads.to_vec(),
            params: ParamVector::zeros(layout),
            offsets,
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], heads: &[Head], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, heads)?;
        let mut values = vec![0.0; net.num_params()];
        for (layer, w) in sizes.windows(2).enumerate() {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let start = net.offsets[layer];
            for v in &mut values[start..start + w[0] * w[1]] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        net.set_params(values)?;
        Ok(net)
    }

    pub fn seeded(sizes: &[usize], heads: &[Head], seed: u64) -> Result<Self> {
        Self::new(sizes, heads, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Replaces the parameter values; rejects wrong lengths and non-finite values.
    pub fn set_params(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(NnError::ShapeMismatch {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        self.params = self
            .params
            .with_values(values)
            .expect("length and finiteness checked");
        Ok(())
    }

    /// Zeroes the last layer so every pre-activation of the output is zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.offsets.len() - 1;
        let mut values = self.params.values().to_vec();
        for v in &mut values[self.offsets[last]..] {
            *v = 0.0;
        }
        self.set_params(values).expect("zeros are finite");
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(NnError::ShapeMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    // activations of every layer, input first
    fn trace(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for layer in 0..n_layers {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let w = &params[self.offsets[layer]..self.offsets[layer] + n_in * n_out];
            let b = &params[self.offsets[layer] + n_in * n_out..][..n_out];
            let x = &acts[layer];
            let last = layer + 1 == n_layers;
            let out: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let z = b[j] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                    if last {
                        self.heads[j].apply(z)
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(self.params.values(), input)
    }

    /// Forward pass with externally supplied parameter values.
    pub fn forward_with(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(input)?;
        Ok(self.trace(params, input).pop().expect("non-empty trace"))
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let (params, input_grad) = self.backward_with(self.params.values(), input, upstream)?;
        Ok(Gradients {
            params: self
                .params
                .with_values(params)
                .map_err(|_| NnError::NonFinite("parameter gradient"))?,
            input: input_grad,
        })
    }

    /// Gradients of `upstream . forward(input)` with respect to the parameters
    /// and the input, with externally supplied parameter values.
    pub fn backward_with(
        &self,
        params: &[f64],
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_params(params)?;
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let acts = self.trace(params, input);
        let n_layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; params.len()];

        // delta = d(objective)/d(pre-activation) of the current layer
        let out = &acts[n_layers];
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(out)
            .zip(&self.heads)
            .map(|((u, y), h)| u * h.slope(*y))
            .collect();

        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let w_at = self.offsets[layer];
            let b_at = w_at + n_in * n_out;
            let x = &acts[layer];
            for j in 0..n_out {
                let dj = delta[j];
                grad[b_at + j] += dj;
                if dj != 0.0 {
                    let g_row = &mut grad[w_at + j * n_in..w_at + (j + 1) * n_in];
                    for (g, xi) in g_row.iter_mut().zip(x) {
                        *g += dj * xi;
                    }
                }
            }
            let w = &params[w_at..b_at];
            let mut back = vec![0.0; n_in];
            for (j, dj) in delta.iter().enumerate() {
                if *dj == 0.0 {
                    continue;
                }
                for (bi, wi) in back.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *bi += dj * wi;
                }
            }
            if layer > 0 {
                // through the hidden tanh
                for (bi, a) in back.iter_mut().zip(x) {
                    *bi *= 1.0 - a * a;
                }
            }
            delta = back;
        }
        Ok((grad, delta))
    }

    /// Serialises as: magic, `u32` layer count, `u32` sizes, one head tag
    /// byte per output, then every parameter as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.sizes.len() + 8 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend(self.heads.iter().map(|h| h.tag()));
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(NnError::BadFile("truncated".into()));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(NnError::BadFile("wrong magic".into()));
        }
        let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let n_sizes = read_u32(take(4)?);
        if !(2..=64).contains(&n_sizes) {
            return Err(NnError::BadFile(format!(
                "implausible layer count {n_sizes}"
            )));
        }
        let sizes = (0..n_sizes)
            .map(|_| take(4).map(read_u32))
            .collect::<Result<Vec<_>>>()?;
        let n_out = *sizes.last().expect("n_sizes >= 2");
        let heads = take(n_out)?
            .iter()
            .map(|t| {
                Head::from_tag(*t).ok_or_else(|| NnError::BadFile(format!("bad head tag {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes, &heads)?;
        let values = (0..net.num_params())
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        if !cursor.is_empty() {
            return Err(NnError::BadFile(format!("{} trailing bytes", cursor.len())));
        }
        net.set_params(values)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Adam optimiser state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Moves `params` against `grad` (a descent step).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Outcome of a randomized finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    /// worst norm-wise relative error of the parameter gradient
    pub max_param_error: f64,
    /// worst norm-wise relative error of the input gradient
    pub max_input_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.tolerance
    }
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        return 0.0;
    }
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / scale
}

/// Compares [`DenseNet::backward`] against central differences on `trials`
/// random `(input, upstream)` pairs.
pub fn grad_check(net: &DenseNet, trials: usize, seed: u64) -> GradCheckReport {
    grad_check_with(net, trials, seed, |net, x, up| {
        net.backward_with(net.params().values(), x, up)
            .expect("shapes are generated to match")
    })
}

/// Like [`grad_check`] but with a caller-supplied analytic gradient, which
/// lets tests inject a faulty one.
pub fn grad_check_with<F>(net: &DenseNet, trials: usize, seed: u64, analytic: F) -> GradCheckReport
where
    F: Fn(&DenseNet, &[f64], &[f64]) -> (Vec<f64>, Vec<f64>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = GRAD_CHECK_STEP;
    let mut report = GradCheckReport {
        trials,
        max_param_error: 0.0,
        max_input_error: 0.0,
        tolerance: GRAD_CHECK_TOL,
    };
    let base = net.params().values().to_vec();
    for _ in 0..trials {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let up: Vec<f64> = (0..net.output_dim())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let objective = |p: &[f64], x: &[f64]| -> f64 {
            let y = net.forward_with(p, x).expect("shapes match");
            y.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let (pg, ig) = analytic(net, &x, &up);

        let mut probe = base.clone();
        let fd_params: Vec<f64> = (0..base.len())
            .map(|k| {
                probe[k] = base[k] + h;
                let f_up = objective(&probe, &x);
                probe[k] = base[k] - h;
                let f_down = objective(&probe, &x);
                probe[k] = base[k];
                (f_up - f_down) / (2.0 * h)
            })
            .collect();
        let mut xp = x.clone();
        let fd_input: Vec<f64> = (0..x.len())
            .map(|k| {
                xp[k] = x[k] + h;
                let f_up = objective(&base, &xp);
                xp[k] = x[k] - h;
                let f_down = objective(&base, &xp);
                xp[k] = x[k];
                (f_up - f_down) / (2.0 * h)
            })
            .collect();

        report.max_param_error = report.max_param_error.max(relative_error(&pg, &fd_params));
        report.max_input_error = report.max_input_error.max(relative_error(&ig, &fd_input));
    }
    report
}
