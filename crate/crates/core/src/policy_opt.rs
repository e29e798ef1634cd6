//! Orthogonality residual and the OPGD update.
//!
//! For a batch of stored interactions the residual is
//!
//! ```text
//! g = sum_i w_i * grad_{theta_a} pi(a_i | s_i) * Q(s_i, a_i; theta_Q)
//! ```
//!
//! which lives in the policy-parameter space. The policy gradient vanishes
//! exactly when `g = 0`, so OPGD minimises the surrogate `L = 0.5 |g|^2`:
//!
//! * critic: `theta_Q -= eta * sum_i (dL/dQ_i) dQ_i/dtheta_Q`, the exact
//!   gradient of `L` since the score factors do not depend on `theta_Q`;
//! * actor: `theta_a -= eta * sum_i (dL/dQ_i) (dQ/da)_i (dpi/dtheta_a)_i`,
//!   with the score factors inside `g` frozen at the pre-step `theta_a`.
//!
//! The critic is queried freshly for every stored `(s, a)` on every step;
//! nothing cached at insertion time enters the residual.

use std::borrow::Borrow;
use std::ops::Range;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("the interaction buffer is empty")]
    EmptyBuffer,
    #[error("non-finite value in {0}; reduce the learning rate")]
    NonFiniteGradient(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, OptError>;

/// Named, contiguous, disjoint segments covering a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<(String, Range<usize>)>,
    len: usize,
}

impl ParamLayout {
    /// Lays out the named blocks back to back.
    pub fn new<N: Into<String>>(blocks: impl IntoIterator<Item = (N, usize)>) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (name, size) in blocks {
            segments.push((name.into(), offset..offset + size));
            offset += size;
        }
        Self {
            segments,
            len: offset,
        }
    }

    pub fn single(name: &str, len: usize) -> Self {
        Self::new([(name, len)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[(String, Range<usize>)] {
        &self.segments
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }
}

/// Flat parameter vector with a shared [`ParamLayout`]. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<ParamLayout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(OptError::ShapeMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OptError::InvalidParams("non-finite parameter".into()));
        }
        Ok(Self { values, layout })
    }

    /// Single-segment vector named `"params"`.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(ParamLayout::single("params", values.len()));
        Self::new(values, layout)
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, Arc::clone(&self.layout))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One stored interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
}

/// Ring buffer of interaction records. Once full, each insert evicts the
/// oldest record. Stored records are never modified.
#[derive(Debug, Clone)]
pub struct InteractionBuffer<T> {
    records: Vec<T>,
    capacity: usize,
    // slot the next insert overwrites once full
    head: usize,
}

impl<T> InteractionBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            records: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
        }
    }

    pub fn push(&mut self, record: T) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.head] = record;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Record `i`, counted from the oldest one still stored.
    pub fn get(&self, i: usize) -> Option<&T> {
        if i >= self.records.len() {
            return None;
        }
        let start = if self.records.len() < self.capacity {
            0
        } else {
            self.head
        };
        self.records.get((start + i) % self.records.len())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len()).map(move |i| self.get(i).expect("index in range"))
    }

    /// Uniform sample of `batch` distinct records, or every record in age
    /// order when the buffer holds no more than `batch`.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        if self.len() <= batch {
            return self.iter().collect();
        }
        index::sample(rng, self.len(), batch)
            .into_iter()
            .map(|i| self.get(i).expect("index in range"))
            .collect()
    }
}

/// Hyperparameters of the OPGD loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpgdConfig {
    /// learning rate
    pub eta: f64,
    pub batch: usize,
    pub capacity: usize,
    /// number of outer iterations
    pub horizon: usize,
}

impl Default for OpgdConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            batch: 32,
            capacity: 20_000,
            horizon: 1_000,
        }
    }
}

impl OpgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OptError::InvalidConfig(format!(
                "eta must be positive and finite, got {}",
                self.eta
            )));
        }
        for (name, v) in [
            ("batch", self.batch),
            ("capacity", self.capacity),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err(OptError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A stochastic policy whose action probability (or density) is
/// differentiable in its parameters.
pub trait ScoredPolicy<S, A> {
    fn num_params(&self) -> usize;

    /// `grad_theta pi(action | state)`.
    fn prob_gradient(&self, params: &[f64], state: &S, action: &A) -> Vec<f64>;

    /// `cotangent^T (d action / d theta)`: pulls a gradient over the action
    /// coordinates back into parameter space.
    fn action_vjp(&self, params: &[f64], state: &S, cotangent: &[f64]) -> Vec<f64>;
}

/// Value, parameter gradient and action gradient of a critic at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEval {
    pub value: f64,
    pub param_grad: Vec<f64>,
    pub action_grad: Vec<f64>,
}

pub trait DifferentiableCritic<S, A> {
    fn num_params(&self) -> usize;

    fn value(&self, params: &[f64], state: &S, action: &A) -> f64;

    fn evaluate(&self, params: &[f64], state: &S, action: &A) -> CriticEval;
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(OptError::ShapeMismatch { expected, actual });
    }
    Ok(())
}

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OptError::NonFiniteGradient(what.into()));
    }
    Ok(())
}

/// Residual over explicitly weighted `(state, action, weight)` terms.
pub fn weighted_residual<'a, S: 'a, A: 'a, P, C>(
    policy: &P,
    theta_a: &ParamVector,
    critic: &C,
    theta_q: &ParamVector,
    terms: impl IntoIterator<Item = (&'a S, &'a A, f64)>,
) -> Result<ParamVector>
where
    P: ScoredPolicy<S, A> + ?Sized,
    C: DifferentiableCritic<S, A> + ?Sized,
{
    check_len(policy.num_params(), theta_a.len())?;
    check_len(critic.num_params(), theta_q.len())?;
    let mut g = vec![0.0; theta_a.len()];
    let mut any = false;
    for (state, action, weight) in terms {
        any = true;
        let q = critic.value(theta_q.values(), state, action);
        let score = policy.prob_gradient(theta_a.values(), state, action);
        for (gk, sk) in g.iter_mut().zip(&score) {
            *gk += weight * q * sk;
        }
    }
    if !any {
        return Err(OptError::EmptyBuffer);
    }
    ensure_finite("orthogonality residual", &g)?;
    theta_a.with_values(g)
}

/// `g = sum over records of grad pi(a|s) Q(s,a)`, each record weighted once.
pub fn orthogonality_residual<S, A, P, C, R>(
    policy: &P,
    theta_a: &ParamVector,
    critic: &C,
    theta_q: &ParamVector,
    records: &[R],
) -> Result<ParamVector>
where
    P: ScoredPolicy<S, A> + ?Sized,
    C: DifferentiableCritic<S, A> + ?Sized,
    R: Borrow<Transition<S, A>>,
{
    weighted_residual(
        policy,
        theta_a,
        critic,
        theta_q,
        records.iter().map(|r| {
            let t = r.borrow();
            (&t.state, &t.action, 1.0)
        }),
    )
}

/// `0.5 * |g|^2`.
pub fn surrogate_loss(g: &[f64]) -> f64 {
    0.5 * g.iter().map(|v| v * v).sum::<f64>()
}

/// Output of one OPGD step: updated parameters, plus the loss and residual
/// evaluated at the pre-step parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OpgdStep {
    pub theta_a: ParamVector,
    pub theta_q: ParamVector,
    pub loss: f64,
    pub residual: ParamVector,
}

/// One OPGD step over weighted terms.
pub fn opgd_step_weighted<'a, S: 'a, A: 'a, P, C>(
    policy: &P,
    critic: &C,
    theta_a: &ParamVector,
    theta_q: &ParamVector,
    terms: impl IntoIterator<Item = (&'a S, &'a A, f64)>,
    eta: f64,
) -> Result<OpgdStep>
where
    P: ScoredPolicy<S, A> + ?Sized,
    C: DifferentiableCritic<S, A> + ?Sized,
{
    check_len(policy.num_params(), theta_a.len())?;
    check_len(critic.num_params(), theta_q.len())?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(OptError::InvalidConfig(format!(
            "eta must be non-negative and finite, got {eta}"
        )));
    }

    struct Cached<'a, S> {
        state: &'a S,
        weight: f64,
        score: Vec<f64>,
        critic: CriticEval,
    }

    let cached: Vec<Cached<'a, S>> = terms
        .into_iter()
        .map(|(state, action, weight)| Cached {
            state,
            weight,
            score: policy.prob_gradient(theta_a.values(), state, action),
            critic: critic.evaluate(theta_q.values(), state, action),
        })
        .collect();
    if cached.is_empty() {
        return Err(OptError::EmptyBuffer);
    }

    let mut g = vec![0.0; theta_a.len()];
    for c in &cached {
        let scale = c.weight * c.critic.value;
        for (gk, sk) in g.iter_mut().zip(&c.score) {
            *gk += scale * sk;
        }
    }
    ensure_finite("orthogonality residual", &g)?;
    let loss = surrogate_loss(&g);

    let mut grad_q = vec![0.0; theta_q.len()];
    let mut grad_a = vec![0.0; theta_a.len()];
    for c in &cached {
        // dL/dQ_i = w_i <g, score_i>
        let dl_dq = c.weight * dot(&g, &c.score);
        if dl_dq == 0.0 {
            continue;
        }
        for (gq, pq) in grad_q.iter_mut().zip(&c.critic.param_grad) {
            *gq += dl_dq * pq;
        }
        let pulled = policy.action_vjp(theta_a.values(), c.state, &c.critic.action_grad);
        for (ga, pa) in grad_a.iter_mut().zip(&pulled) {
            *ga += dl_dq * pa;
        }
    }
    ensure_finite("critic gradient", &grad_q)?;
    ensure_finite("actor gradient", &grad_a)?;

    let next_q: Vec<f64> = theta_q
        .values()
        .iter()
        .zip(&grad_q)
        .map(|(p, d)| p - eta * d)
        .collect();
    let next_a: Vec<f64> = theta_a
        .values()
        .iter()
        .zip(&grad_a)
        .map(|(p, d)| p - eta * d)
        .collect();
    ensure_finite("updated critic parameters", &next_q)?;
    ensure_finite("updated actor parameters", &next_a)?;

    Ok(OpgdStep {
        theta_a: theta_a.with_values(next_a)?,
        theta_q: theta_q.with_values(next_q)?,
        loss,
        residual: theta_a.with_values(g)?,
    })
}

/// One OPGD step over stored records, each with unit weight.
pub fn opgd_step<S, A, P, C, R>(
    policy: &P,
    critic: &C,
    theta_a: &ParamVector,
    theta_q: &ParamVector,
    records: &[R],
    eta: f64,
) -> Result<OpgdStep>
where
    P: ScoredPolicy<S, A> + ?Sized,
    C: DifferentiableCritic<S, A> + ?Sized,
    R: Borrow<Transition<S, A>>,
{
    opgd_step_weighted(
        policy,
        critic,
        theta_a,
        theta_q,
        records.iter().map(|r| {
            let t = r.borrow();
            (&t.state, &t.action, 1.0)
        }),
        eta,
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tabular softmax policy over integer states and actions. Parameters are
/// `theta[s * n_actions + a]`.
///
/// For the actor chain through dQ/da the "action" is relaxed to the probability vector
/// `pi(.|s)`, so `action_vjp` maps a cotangent `c` over actions to
/// `sum_b c_b grad pi(b|s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularSoftmax {
    pub n_states: usize,
    pub n_actions: usize,
}

impl TabularSoftmax {
    pub fn probs(&self, params: &[f64], state: usize) -> Vec<f64> {
        let row = &params[state * self.n_actions..(state + 1) * self.n_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

impl ScoredPolicy<usize, usize> for TabularSoftmax {
    fn num_params(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn prob_gradient(&self, params: &[f64], state: &usize, action: &usize) -> Vec<f64> {
        let pi = self.probs(params, *state);
        let mut out = vec![0.0; self.num_params()];
        let base = state * self.n_actions;
        for (b, pb) in pi.iter().enumerate() {
            let delta = if b == *action { 1.0 } else { 0.0 };
            out[base + b] = pi[*action] * (delta - pb);
        }
        out
    }

    fn action_vjp(&self, params: &[f64], state: &usize, cotangent: &[f64]) -> Vec<f64> {
        let pi = self.probs(params, *state);
        let mean: f64 = pi.iter().zip(cotangent).map(|(p, c)| p * c).sum();
        let mut out = vec![0.0; self.num_params()];
        let base = state * self.n_actions;
        for (b, pb) in pi.iter().enumerate() {
            out[base + b] = pb * (cotangent[b] - mean);
        }
        out
    }
}

/// Lookup-table critic `Q(s, a) = theta_Q[s * n_actions + a]`. Its action
/// gradient is the row `Q(s, .)`, the derivative of `sum_b p_b Q(s, b)` with
/// respect to the relaxed action `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TabularCritic {
    pub n_states: usize,
    pub n_actions: usize,
}

impl DifferentiableCritic<usize, usize> for TabularCritic {
    fn num_params(&self) -> usize {
        self.n_states * self.n_actions
    }

    fn value(&self, params: &[f64], state: &usize, action: &usize) -> f64 {
        params[state * self.n_actions + action]
    }

    fn evaluate(&self, params: &[f64], state: &usize, action: &usize) -> CriticEval {
        let mut param_grad = vec![0.0; self.num_params()];
        param_grad[state * self.n_actions + action] = 1.0;
        let row = state * self.n_actions;
        CriticEval {
            value: self.value(params, state, action),
            param_grad,
            action_grad: params[row..row + self.n_actions].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(state: usize, action: usize) -> Transition<usize, usize> {
        Transition {
            state,
            action,
            reward: 0.0,
            next_state: state,
            terminal: false,
        }
    }

    fn tabular(ns: usize, na: usize) -> (TabularSoftmax, TabularCritic) {
        (
            TabularSoftmax {
                n_states: ns,
                n_actions: na,
            },
            TabularCritic {
                n_states: ns,
                n_actions: na,
            },
        )
    }

    #[test]
    fn layout_segments_cover_the_vector() {
        let layout = ParamLayout::new([("w", 6), ("b", 3), ("w2", 3)]);
        assert_eq!(layout.len(), 12);
        assert_eq!(layout.range("b"), Some(6..9));
        let mut next = 0;
        for (_, r) in layout.segments() {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, layout.len());
        let pv = ParamVector::new((0..12).map(f64::from).collect(), Arc::new(layout)).unwrap();
        assert_eq!(pv.segment("w2"), Some(&[9.0, 10.0, 11.0][..]));
        assert!(pv.with_values(vec![f64::NAN; 12]).is_err());
        assert!(pv.with_values(vec![0.0; 11]).is_err());
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut buf = InteractionBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(buf.get(0), Some(&2));
        assert_eq!(buf.get(3), None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample(10, &mut rng).len(), 3);
        let picked = buf.sample(2, &mut rng);
        assert_eq!(picked.len(), 2);
        assert_ne!(picked[0], picked[1]);
    }

    #[test]
    fn config_validation() {
        assert!(OpgdConfig::default().validate().is_ok());
        let bad = OpgdConfig {
            eta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OpgdConfig {
            batch: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_record_residual_by_hand() {
        let (policy, critic) = tabular(1, 2);
        let theta_a = ParamVector::flat(vec![0.0, 0.0]).unwrap();
        let theta_q = ParamVector::flat(vec![1.0, 0.0]).unwrap();
        let g =
            orthogonality_residual(&policy, &theta_a, &critic, &theta_q, &[record(0, 0)]).unwrap();
        assert_close!(g.values()[0], 0.25, 1e-15);
        assert_close!(g.values()[1], -0.25, 1e-15);
    }

    #[test]
    fn zero_critic_gives_zero_residual_and_no_movement() {
        let (policy, critic) = tabular(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta_a =
            ParamVector::flat((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let theta_q = ParamVector::flat(vec![0.0; 6]).unwrap();
        let records = vec![record(0, 1), record(2, 0), record(1, 1)];
        let g = orthogonality_residual(&policy, &theta_a, &critic, &theta_q, &records).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
        let step = opgd_step(&policy, &critic, &theta_a, &theta_q, &records, 0.1).unwrap();
        assert_eq!(step.loss, 0.0);
        assert_eq!(step.theta_a, theta_a);
        assert_eq!(step.theta_q, theta_q);
    }

    #[test]
    fn duplicated_buffer_doubles_residual() {
        let (policy, critic) = tabular(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta_a =
            ParamVector::flat((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let theta_q =
            ParamVector::flat((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let records: Vec<_> = (0..7)
            .map(|_| record(rng.random_range(0..3), rng.random_range(0..3)))
            .collect();
        let doubled: Vec<_> = records.iter().chain(records.iter()).collect();
        let g = orthogonality_residual(&policy, &theta_a, &critic, &theta_q, &records).unwrap();
        let g2 = orthogonality_residual(&policy, &theta_a, &critic, &theta_q, &doubled).unwrap();
        for (a, b) in g.values().iter().zip(g2.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let (policy, critic) = tabular(1, 2);
        let theta = ParamVector::flat(vec![0.0, 0.0]).unwrap();
        let none: Vec<Transition<usize, usize>> = Vec::new();
        assert_eq!(
            orthogonality_residual(&policy, &theta, &critic, &theta, &none),
            Err(OptError::EmptyBuffer)
        );
        assert_eq!(
            opgd_step(&policy, &critic, &theta, &theta, &none, 0.1),
            Err(OptError::EmptyBuffer)
        );
    }

    #[test]
    fn surrogate_loss_values() {
        assert_eq!(surrogate_loss(&[0.0, 0.0]), 0.0);
        assert_eq!(surrogate_loss(&[3.0, 4.0]), 12.5);
        // d/dg of 0.5|g|^2 is g
        let g = [0.3, -1.2];
        let h = 1e-6;
        for k in 0..2 {
            let mut up = g;
            up[k] += h;
            let mut down = g;
            down[k] -= h;
            let fd = (surrogate_loss(&up) - surrogate_loss(&down)) / (2.0 * h);
            assert_close!(fd, g[k], 1e-9);
        }
    }

    #[test]
    fn zero_eta_reports_loss_without_moving() {
        let (policy, critic) = tabular(1, 2);
        let theta_a = ParamVector::flat(vec![0.0, 0.0]).unwrap();
        let theta_q = ParamVector::flat(vec![1.0, 0.0]).unwrap();
        let step = opgd_step(&policy, &critic, &theta_a, &theta_q, &[record(0, 0)], 0.0).unwrap();
        assert_close!(step.loss, 0.0625, 1e-15);
        assert_eq!(step.theta_a, theta_a);
        assert_eq!(step.theta_q, theta_q);
    }

    #[test]
    fn single_record_step_decreases_loss() {
        let (policy, critic) = tabular(1, 2);
        let theta_a = ParamVector::flat(vec![0.0, 0.0]).unwrap();
        let theta_q = ParamVector::flat(vec![1.0, 0.0]).unwrap();
        let records = [record(0, 0)];
        let step = opgd_step(&policy, &critic, &theta_a, &theta_q, &records, 0.1).unwrap();
        let after =
            orthogonality_residual(&policy, &step.theta_a, &critic, &step.theta_q, &records)
                .unwrap();
        assert!(surrogate_loss(after.values()) < step.loss);
    }

    #[test]
    fn critic_update_is_the_exact_loss_gradient() {
        let (policy, critic) = tabular(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta_a =
            ParamVector::flat((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let theta_q =
            ParamVector::flat((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let records: Vec<_> = (0..10)
            .map(|_| record(rng.random_range(0..3), rng.random_range(0..2)))
            .collect();
        let eta = 1.0;
        let step = opgd_step(&policy, &critic, &theta_a, &theta_q, &records, eta).unwrap();
        let loss_at = |q: &[f64]| {
            let tq = ParamVector::flat(q.to_vec()).unwrap();
            let g = orthogonality_residual(&policy, &theta_a, &critic, &tq, &records).unwrap();
            surrogate_loss(g.values())
        };
        let h = 1e-6;
        for k in 0..6 {
            let mut up = theta_q.values().to_vec();
            up[k] += h;
            let mut down = theta_q.values().to_vec();
            down[k] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            let applied = (theta_q.values()[k] - step.theta_q.values()[k]) / eta;
            assert_close!(applied, fd, 1e-8);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (policy, critic) = tabular(2, 2);
        let short = ParamVector::flat(vec![0.0; 3]).unwrap();
        let ok = ParamVector::flat(vec![0.0; 4]).unwrap();
        assert!(matches!(
            orthogonality_residual(&policy, &short, &critic, &ok, &[record(0, 0)]),
            Err(OptError::ShapeMismatch { .. })
        ));
    }
}
