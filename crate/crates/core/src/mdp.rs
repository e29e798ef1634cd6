//! Exact finite-MDP machinery for the average-reward setting.
//!
//! Everything here is a pure function of a [`TabularMdp`] and a policy. The
//! average-reward quantities (stationary distribution, average reward,
//! differential values) are obtained by direct linear solves; the discounted
//! quantities are provided alongside because the two notions of "action value"
//! are easy to confuse:
//!
//! * [`differential_values`] returns the differential action values
//!   `Q(s,a) = R(s,a) - rho + sum_s' P(s'|s,a) V(s')`, which is what the
//!   average-reward policy gradient is built from.
//! * [`discounted_q`] returns the discounted action values
//!   `Q(s,a) = R(s,a) + lambda * sum_s' P(s'|s,a) sum_a' pi(a'|s') Q(s',a')`.
//!
//! Differential values are only defined up to an additive constant. We fix the
//! gauge `sum_s d(s) V(s) = 0`; the gradient does not depend on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Tolerance for row-stochasticity of transition rows.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Default central-difference step for [`finite_difference_gradient`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Smallest acceptable ratio between the extreme singular values of the
/// stationary system before the chain is declared non-ergodic.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("induced Markov chain is not ergodic: {0}")]
    NonErgodicChain(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, MdpError>;

/// Finite MDP with `n_states` states and `n_actions` actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // (s, a, s') -> P, laid out s-major
    transition: Vec<f64>,
    // (s, a) -> R
    reward: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from flat tables. `transition[(s * n_actions + a) * n_states + s']`
    /// and `reward[s * n_actions + a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::InvalidMdp(
                "state and action counts must be positive".into(),
            ));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::ShapeMismatch {
                expected: format!("{} transition entries", n_states * n_actions * n_states),
                actual: transition.len().to_string(),
            });
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::ShapeMismatch {
                expected: format!("{} reward entries", n_states * n_actions),
                actual: reward.len().to_string(),
            });
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(MdpError::InvalidMdp(format!("non-finite reward {r}")));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            let (s, a) = (row_idx / n_actions, row_idx % n_actions);
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(MdpError::InvalidMdp(format!(
                    "probability {p} outside [0,1] at (s={s}, a={a})"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MdpError::InvalidMdp(format!(
                    "transition row (s={s}, a={a}) sums to {total}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        p: impl Fn(usize, usize, usize) -> f64,
        r: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        let mut reward = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                reward.push(r(s, a));
                transition.extend((0..n_states).map(|s2| p(s, a, s2)));
            }
        }
        Self::new(n_states, n_actions, transition, reward)
    }

    /// Random MDP with strictly positive transition probabilities (hence
    /// ergodic under every policy) and rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        assert!(n_states > 0 && n_actions > 0);
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        let mut reward = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states * n_actions {
            reward.push(rng.random_range(-1.0..=1.0));
            // cubing skews the rows so some successors dominate
            let row: Vec<f64> = (0..n_states)
                .map(|_| 1e-3 + rng.random::<f64>().powi(3))
                .collect();
            let total: f64 = row.iter().sum();
            transition.extend(row.iter().map(|p| p / total));
        }
        Self::new(n_states, n_actions, transition, reward)
            .expect("random construction is always valid")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Reward matrix `R(s, a)` as an `n_states x n_actions` matrix.
    pub fn reward_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_actions, |s, a| self.r(s, a))
    }

    /// State-to-state kernel and expected reward induced by action
    /// probabilities `probs` (`n_states x n_actions`, rows sum to one).
    pub fn induced_chain(&self, probs: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states;
        let mut kernel = DMatrix::zeros(n, n);
        let mut reward = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = probs[(s, a)];
                reward[s] += w * self.r(s, a);
                for (next, p) in self.transition_row(s, a).iter().enumerate() {
                    kernel[(s, next)] += w * p;
                }
            }
        }
        (kernel, reward)
    }

    fn check_probs(&self, probs: &DMatrix<f64>) -> Result<()> {
        if probs.shape() != (self.n_states, self.n_actions) {
            return Err(MdpError::ShapeMismatch {
                expected: format!("{}x{} policy", self.n_states, self.n_actions),
                actual: format!("{}x{}", probs.nrows(), probs.ncols()),
            });
        }
        Ok(())
    }
}

/// Plain-text MDP format:
///
/// ```text
/// # comments and blank lines are ignored
/// states 2 actions 2
/// 1.0  0.9 0.1      # (s=0, a=0): reward, then P(s'=0), P(s'=1)
/// 0.0  0.2 0.8      # (s=0, a=1)
/// 0.5  0.5 0.5      # (s=1, a=0)
/// -1   0.0 1.0      # (s=1, a=1)
/// ```
///
/// After the header there is exactly one row per `(s, a)` pair, ordered by
/// state and then action.
impl FromStr for TabularMdp {
    type Err = MdpError;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(MdpError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let (n_states, n_actions) = match tokens.as_slice() {
            ["states", s, "actions", a] => {
                let parse = |t: &str| {
                    t.parse::<usize>().map_err(|e| MdpError::Parse {
                        line: hline,
                        msg: format!("bad count {t:?}: {e}"),
                    })
                };
                (parse(s)?, parse(a)?)
            }
            _ => {
                return Err(MdpError::Parse {
                    line: hline,
                    msg: "expected header `states <n> actions <m>`".into(),
                })
            }
        };

        let mut transition = Vec::new();
        let mut reward = Vec::new();
        for (line, body) in lines {
            let values = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| MdpError::Parse {
                        line,
                        msg: format!("bad number {t:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != n_states + 1 {
                return Err(MdpError::Parse {
                    line,
                    msg: format!("expected {} values, found {}", n_states + 1, values.len()),
                });
            }
            reward.push(values[0]);
            transition.extend_from_slice(&values[1..]);
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::Parse {
                line: hline,
                msg: format!(
                    "expected {} (state, action) rows, found {}",
                    n_states * n_actions,
                    reward.len()
                ),
            });
        }
        Self::new(n_states, n_actions, transition, reward)
    }
}

impl fmt::Display for TabularMdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states {} actions {}", self.n_states, self.n_actions)?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                write!(f, "{}", self.r(s, a))?;
                for p in self.transition_row(s, a) {
                    write!(f, " {p}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Tabular softmax policy `pi(a|s) = exp(theta[s,a]) / sum_b exp(theta[s,b])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    theta: DMatrix<f64>,
}

impl SoftmaxPolicy {
    pub fn new(theta: DMatrix<f64>) -> Self {
        Self { theta }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(DMatrix::zeros(n_states, n_actions))
    }

    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(DMatrix::from_fn(n_states, n_actions, |_, _| {
            rng.random_range(-scale..=scale)
        }))
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.theta
    }

    pub fn n_states(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.theta.ncols()
    }

    /// Action probabilities in state `s`.
    pub fn probs_at(&self, s: usize) -> Vec<f64> {
        let row = self.theta.row(s);
        let max = row.max();
        let exps: Vec<f64> = row.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// All action probabilities as an `n_states x n_actions` matrix.
    pub fn probabilities(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            for (a, p) in self.probs_at(s).into_iter().enumerate() {
                out[(s, a)] = p;
            }
        }
        out
    }

    /// Jacobian of `pi(.|s)` with respect to `theta[s, .]`: entry `(a, b)` is
    /// `d pi(a|s) / d theta[s,b] = pi(a|s) (delta_ab - pi(b|s))`. Derivatives
    /// with respect to other states' parameters are zero.
    pub fn prob_jacobian(&self, s: usize) -> DMatrix<f64> {
        let pi = self.probs_at(s);
        let n = pi.len();
        DMatrix::from_fn(n, n, |a, b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            pi[a] * (delta - pi[b])
        })
    }
}

/// Average-reward solution of a policy: `rho`, stationary distribution `d`,
/// differential state values and differential action values (`n_states x n_actions`).
#[derive(Debug, Clone, PartialEq)]
pub struct AverageRewardSolution {
    pub rho: f64,
    pub d: DVector<f64>,
    pub v_diff: DVector<f64>,
    pub q_diff: DMatrix<f64>,
}

impl AverageRewardSolution {
    /// Largest violation of `V(s) = sum_a pi(a|s) [R - rho + sum P V]`.
    pub fn evaluation_residual(&self, mdp: &TabularMdp, probs: &DMatrix<f64>) -> f64 {
        let (kernel, reward) = mdp.induced_chain(probs);
        let rhs =
            &reward - DVector::from_element(mdp.n_states(), self.rho) + &kernel * &self.v_diff;
        (&self.v_diff - rhs).amax()
    }
}

fn stationary_from_kernel(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    // (P^T - I) d = 0 with the last equation swapped for sum(d) = 1
    let mut system = kernel.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;

    let sv = system.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return Err(MdpError::NonErgodicChain(format!(
            "stationary system is rank deficient (singular value ratio {:.3e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let mut d = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MdpError::NonErgodicChain("stationary system is singular".into()))?;
    if d.iter().any(|x| !x.is_finite() || *x < -1e-10) {
        return Err(MdpError::NonErgodicChain(
            "stationary solve produced a negative mass".into(),
        ));
    }
    d.apply(|x| *x = x.max(0.0));
    Ok(d)
}

/// Stationary distribution `d` with `d^T P_pi = d^T` for arbitrary action
/// probabilities (`n_states x n_actions`).
pub fn stationary_distribution_of(mdp: &TabularMdp, probs: &DMatrix<f64>) -> Result<DVector<f64>> {
    mdp.check_probs(probs)?;
    let (kernel, _) = mdp.induced_chain(probs);
    stationary_from_kernel(&kernel)
}

pub fn stationary_distribution(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DVector<f64>> {
    stationary_distribution_of(mdp, &policy.probabilities())
}

/// Average reward `rho = sum_s d(s) sum_a pi(a|s) R(s,a)` for arbitrary action probabilities.
pub fn average_reward_of(mdp: &TabularMdp, probs: &DMatrix<f64>) -> Result<f64> {
    mdp.check_probs(probs)?;
    let (kernel, reward) = mdp.induced_chain(probs);
    let d = stationary_from_kernel(&kernel)?;
    Ok(d.dot(&reward))
}

pub fn average_reward(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<f64> {
    average_reward_of(mdp, &policy.probabilities())
}

/// Solves the average-reward evaluation equations in the gauge `d . V = 0`.
pub fn differential_values_of(
    mdp: &TabularMdp,
    probs: &DMatrix<f64>,
) -> Result<AverageRewardSolution> {
    mdp.check_probs(probs)?;
    let n = mdp.n_states();
    let (kernel, reward) = mdp.induced_chain(probs);
    let d = stationary_from_kernel(&kernel)?;
    let rho = d.dot(&reward);

    // (I - P + 1 d^T) V = r - rho 1. Left-multiplying by d^T gives d.V = 0,
    // and the matrix is invertible whenever the chain has one recurrent class.
    let ones = DVector::from_element(n, 1.0);
    let system = DMatrix::identity(n, n) - &kernel + &ones * d.transpose();
    let v_diff = system
        .lu()
        .solve(&(&reward - &ones * rho))
        .ok_or_else(|| MdpError::SingularSystem("Poisson equation".into()))?;
    if v_diff.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::SingularSystem(
            "Poisson equation produced non-finite values".into(),
        ));
    }

    let mut q_diff = DMatrix::zeros(n, mdp.n_actions());
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v_diff.iter())
                .map(|(p, v)| p * v)
                .sum();
            q_diff[(s, a)] = mdp.r(s, a) - rho + next;
        }
    }
    Ok(AverageRewardSolution {
        rho,
        d,
        v_diff,
        q_diff,
    })
}

pub fn differential_values(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<AverageRewardSolution> {
    differential_values_of(mdp, &policy.probabilities())
}

/// `sum_s d(s) sum_a (d pi(a|s) / d theta) q(s,a)` as an `n_states x n_actions`
/// matrix in the shape of `theta`.
///
/// The sum over actions is carried out against the explicit softmax Jacobian,
/// so any constant added to `q` only contributes through
/// `sum_a d pi(a|s) / d theta = 0`.
pub fn policy_gradient_from_q(
    policy: &SoftmaxPolicy,
    d: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    if d.len() != ns || q.shape() != (ns, na) {
        return Err(MdpError::ShapeMismatch {
            expected: format!("d of length {ns} and {ns}x{na} q"),
            actual: format!("d of length {} and {}x{} q", d.len(), q.nrows(), q.ncols()),
        });
    }
    let mut grad = DMatrix::zeros(ns, na);
    for s in 0..ns {
        let jac = policy.prob_jacobian(s);
        for b in 0..na {
            let inner: f64 = (0..na).map(|a| jac[(a, b)] * q[(s, a)]).sum();
            grad[(s, b)] = d[s] * inner;
        }
    }
    Ok(grad)
}

/// Gradient of the average reward with respect to `theta`, assembled from the
/// stationary distribution and the differential action values.
pub fn exact_policy_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
    let sol = differential_values(mdp, policy)?;
    policy_gradient_from_q(policy, &sol.d, &sol.q_diff)
}

/// Central differences of [`average_reward`] in every coordinate of `theta`.
pub fn finite_difference_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    step: f64,
) -> Result<DMatrix<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(MdpError::InvalidParameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let mut grad = DMatrix::zeros(ns, na);
    let mut probe = policy.clone();
    for s in 0..ns {
        for a in 0..na {
            let base = policy.theta()[(s, a)];
            probe.theta_mut()[(s, a)] = base + step;
            let up = average_reward(mdp, &probe)?;
            probe.theta_mut()[(s, a)] = base - step;
            let down = average_reward(mdp, &probe)?;
            probe.theta_mut()[(s, a)] = base;
            grad[(s, a)] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Frobenius-norm relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

fn check_discount(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(MdpError::InvalidParameter(format!(
            "discount must lie in [0, 1), got {lambda}"
        )));
    }
    Ok(())
}

/// Discounted action values of `policy`: the solution of
/// `Q = R + lambda * P * Pi * Q`.
pub fn discounted_q(mdp: &TabularMdp, policy: &SoftmaxPolicy, lambda: f64) -> Result<DMatrix<f64>> {
    check_discount(lambda)?;
    let probs = policy.probabilities();
    mdp.check_probs(&probs)?;
    let n = mdp.n_states();
    let (kernel, reward) = mdp.induced_chain(&probs);
    let v = (DMatrix::identity(n, n) - kernel * lambda)
        .lu()
        .solve(&reward)
        .ok_or_else(|| MdpError::SingularSystem("discounted evaluation".into()))?;
    Ok(DMatrix::from_fn(n, mdp.n_actions(), |s, a| {
        let next: f64 = mdp
            .transition_row(s, a)
            .iter()
            .zip(v.iter())
            .map(|(p, v)| p * v)
            .sum();
        mdp.r(s, a) + lambda * next
    }))
}

/// One sampled `(s, a, r, s')` step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Tabular Q-learning update
/// `Q(s,a) <- Q(s,a) + alpha (r + lambda max_a' Q(s',a') - Q(s,a))`.
pub fn q_learning_update(
    q: &DMatrix<f64>,
    step: &SampleStep,
    alpha: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let (ns, na) = q.shape();
    if step.state >= ns || step.next_state >= ns || step.action >= na {
        return Err(MdpError::IndexOutOfRange(format!(
            "(s={}, a={}, s'={}) for a {ns}x{na} table",
            step.state, step.action, step.next_state
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MdpError::InvalidParameter(format!(
            "step size must lie in [0, 1], got {alpha}"
        )));
    }
    check_discount(lambda)?;
    let best_next = q.row(step.next_state).max();
    let mut out = q.clone();
    let current = q[(step.state, step.action)];
    out[(step.state, step.action)] = current + alpha * (step.reward + lambda * best_next - current);
    Ok(out)
}

/// One synchronous policy-evaluation backup `v'(s) = E[r + lambda v(s')]`.
pub fn bellman_backup(
    v: &DVector<f64>,
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_discount(lambda)?;
    if v.len() != mdp.n_states() {
        return Err(MdpError::ShapeMismatch {
            expected: format!("value vector of length {}", mdp.n_states()),
            actual: v.len().to_string(),
        });
    }
    let probs = policy.probabilities();
    mdp.check_probs(&probs)?;
    let (kernel, reward) = mdp.induced_chain(&probs);
    Ok(reward + kernel * v * lambda)
}

/// Plain gradient ascent `theta <- theta + eta * grad rho` for `steps`
/// iterations. Returns the final policy and the average reward before each
/// step plus the final one.
pub fn gradient_ascent(
    mdp: &TabularMdp,
    start: &SoftmaxPolicy,
    eta: f64,
    steps: usize,
) -> Result<(SoftmaxPolicy, Vec<f64>)> {
    let mut policy = start.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let sol = differential_values(mdp, &policy)?;
        trace.push(sol.rho);
        let grad = policy_gradient_from_q(&policy, &sol.d, &sol.q_diff)?;
        *policy.theta_mut() += grad * eta;
    }
    trace.push(average_reward(mdp, &policy)?);
    Ok((policy, trace))
}

/// Exhaustive search over the `n_actions ^ n_states` deterministic policies.
/// Returns the best action per state and its average reward.
pub fn best_deterministic_policy(mdp: &TabularMdp) -> Result<(Vec<usize>, f64)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let total = (na as u64)
        .checked_pow(ns as u32)
        .filter(|t| *t <= 1 << 24)
        .ok_or_else(|| MdpError::InvalidParameter("too many deterministic policies".into()))?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for code in 0..total {
        let mut rest = code;
        let choice: Vec<usize> = (0..ns)
            .map(|_| {
                let a = (rest % na as u64) as usize;
                rest /= na as u64;
                a
            })
            .collect();
        let probs = DMatrix::from_fn(ns, na, |s, a| if choice[s] == a { 1.0 } else { 0.0 });
        let rho = match average_reward_of(mdp, &probs) {
            Ok(r) => r,
            // a deterministic policy may split the chain; skip it
            Err(MdpError::NonErgodicChain(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, b)| rho > *b) {
            best = Some((choice, rho));
        }
    }
    best.ok_or_else(|| MdpError::NonErgodicChain("no deterministic policy is ergodic".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit(rewards: &[f64]) -> TabularMdp {
        TabularMdp::from_fn(1, rewards.len(), |_, _, _| 1.0, |_, a| rewards[a]).unwrap()
    }

    fn two_cycle() -> TabularMdp {
        TabularMdp::from_fn(
            2,
            2,
            |s, _, n| if s != n { 1.0 } else { 0.0 },
            |s, a| (s + a) as f64,
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, MdpError::InvalidMdp(_)));
        let err = TabularMdp::new(1, 1, vec![1.0], vec![f64::NAN]).unwrap_err();
        assert!(matches!(err, MdpError::InvalidMdp(_)));
        let err = TabularMdp::new(1, 1, vec![1.0, 0.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, MdpError::ShapeMismatch { .. }));
    }

    #[test]
    fn single_state_distribution() {
        let mdp = bandit(&[0.3]);
        let d = stationary_distribution(&mdp, &SoftmaxPolicy::uniform(1, 1)).unwrap();
        assert_eq!(d.as_slice(), &[1.0]);
    }

    #[test]
    fn deterministic_cycle_is_split_evenly() {
        let mdp = two_cycle();
        let d = stationary_distribution(&mdp, &SoftmaxPolicy::uniform(2, 2)).unwrap();
        assert_close!(d[0], 0.5, 1e-15);
        assert_close!(d[1], 0.5, 1e-15);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        // two absorbing states
        let mdp = TabularMdp::from_fn(2, 1, |s, _, n| if s == n { 1.0 } else { 0.0 }, |_, _| 0.0)
            .unwrap();
        let err = stationary_distribution(&mdp, &SoftmaxPolicy::uniform(2, 1)).unwrap_err();
        assert!(matches!(err, MdpError::NonErgodicChain(_)));
        assert!(matches!(
            average_reward(&mdp, &SoftmaxPolicy::uniform(2, 1)),
            Err(MdpError::NonErgodicChain(_))
        ));
    }

    #[test]
    fn constant_reward_gives_constant_rho_and_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = TabularMdp::random(4, 3, &mut rng);
        let mdp = TabularMdp::from_fn(4, 3, |s, a, n| base.p(s, a, n), |_, _| 2.5).unwrap();
        let policy = SoftmaxPolicy::random(4, 3, 1.0, &mut rng);
        assert_close!(average_reward(&mdp, &policy).unwrap(), 2.5, 1e-12);
        let sol = differential_values(&mdp, &policy).unwrap();
        assert!(sol.v_diff.amax() < 1e-12);
        assert!(sol.q_diff.amax() < 1e-12);
    }

    #[test]
    fn fair_coin_bandit() {
        let mdp = bandit(&[0.0, 1.0]);
        assert_close!(
            average_reward(&mdp, &SoftmaxPolicy::uniform(1, 2)).unwrap(),
            0.5,
            1e-15
        );
    }

    #[test]
    fn solution_satisfies_its_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mdp = TabularMdp::random(5, 3, &mut rng);
            let policy = SoftmaxPolicy::random(5, 3, 1.0, &mut rng);
            let probs = policy.probabilities();
            let sol = differential_values(&mdp, &policy).unwrap();
            let (kernel, _) = mdp.induced_chain(&probs);
            assert_close!(sol.d.sum(), 1.0, 1e-10);
            assert!(sol.d.iter().all(|x| *x >= 0.0));
            assert!((kernel.transpose() * &sol.d - &sol.d).amax() < 1e-10);
            assert!(sol.d.dot(&sol.v_diff).abs() < 1e-10);
            assert!(sol.evaluation_residual(&mdp, &probs) < 1e-9);
            for s in 0..5 {
                let row_sum: f64 = kernel.row(s).sum();
                assert_close!(row_sum, 1.0, 1e-12);
                let v: f64 = (0..3).map(|a| probs[(s, a)] * sol.q_diff[(s, a)]).sum();
                assert_close!(v, sol.v_diff[s], 1e-10);
            }
        }
    }

    #[test]
    fn softmax_score_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = SoftmaxPolicy::random(4, 4, 3.0, &mut rng);
        for s in 0..4 {
            assert_close!(policy.probs_at(s).iter().sum::<f64>(), 1.0, 1e-12);
            let jac = policy.prob_jacobian(s);
            for b in 0..4 {
                assert!(jac.column(b).sum().abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn action_independent_mdp_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = TabularMdp::random(3, 1, &mut rng);
        let mdp =
            TabularMdp::from_fn(3, 2, |s, _, n| base.p(s, 0, n), |s, _| base.r(s, 0)).unwrap();
        let policy = SoftmaxPolicy::random(3, 2, 1.0, &mut rng);
        assert!(exact_policy_gradient(&mdp, &policy).unwrap().amax() < 1e-14);
        let fd = finite_difference_gradient(&mdp, &policy, DEFAULT_FD_STEP).unwrap();
        assert!(fd.amax() < 1e-9);
    }

    #[test]
    fn bandit_finite_difference_matches_closed_form() {
        let mdp = bandit(&[1.0, 0.0]);
        let fd = finite_difference_gradient(&mdp, &SoftmaxPolicy::uniform(1, 2), DEFAULT_FD_STEP)
            .unwrap();
        assert_close!(fd[(0, 0)], 0.25, 1e-8);
        assert_close!(fd[(0, 1)], -0.25, 1e-8);
        assert!(finite_difference_gradient(&mdp, &SoftmaxPolicy::uniform(1, 2), 0.0).is_err());
    }

    #[test]
    fn discounted_trivial_cases() {
        let q = discounted_q(&bandit(&[1.0]), &SoftmaxPolicy::uniform(1, 1), 0.9).unwrap();
        assert_close!(q[(0, 0)], 10.0, 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(3, 2, &mut rng);
        let q = discounted_q(&mdp, &SoftmaxPolicy::uniform(3, 2), 0.0).unwrap();
        assert_eq!(q, mdp.reward_matrix());
        assert!(discounted_q(&mdp, &SoftmaxPolicy::uniform(3, 2), 1.0).is_err());
    }

    #[test]
    fn q_learning_arithmetic() {
        let step = SampleStep {
            state: 0,
            action: 1,
            reward: 1.0,
            next_state: 1,
        };
        let q = DMatrix::zeros(2, 2);
        assert_eq!(q_learning_update(&q, &step, 0.0, 0.9).unwrap(), q);
        let out = q_learning_update(&q, &step, 0.5, 0.9).unwrap();
        assert_close!(out[(0, 1)], 0.5, 1e-15);

        let mut q = DMatrix::zeros(2, 2);
        q[(1, 0)] = 2.0;
        q[(1, 1)] = -1.0;
        let out = q_learning_update(&q, &step, 0.5, 0.9).unwrap();
        assert_close!(out[(0, 1)], 1.4, 1e-15);
        for (idx, v) in out.iter().enumerate() {
            if idx != 2 {
                assert_eq!(*v, q.as_slice()[idx]);
            }
        }

        let bad = SampleStep {
            next_state: 2,
            ..step
        };
        assert!(matches!(
            q_learning_update(&q, &bad, 0.5, 0.9),
            Err(MdpError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn bellman_backup_myopic_and_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(4, 2, &mut rng);
        let policy = SoftmaxPolicy::random(4, 2, 1.0, &mut rng);
        let probs = policy.probabilities();
        let (_, expected) = mdp.induced_chain(&probs);
        let out = bellman_backup(&DVector::from_element(4, 7.0), &mdp, &policy, 0.0).unwrap();
        assert!((out - expected).amax() < 1e-15);

        let q = discounted_q(&mdp, &policy, 0.8).unwrap();
        let v = DVector::from_fn(4, |s, _| (0..2).map(|a| probs[(s, a)] * q[(s, a)]).sum());
        let again = bellman_backup(&v, &mdp, &policy, 0.8).unwrap();
        assert!((again - v).amax() < 1e-12);
        assert!(bellman_backup(&DVector::zeros(3), &mdp, &policy, 0.8).is_err());
    }

    #[test]
    fn file_format_roundtrip() {
        let text = "# two-state example\nstates 2 actions 2\n1.0 0.9 0.1\n0.0 0.2 0.8 # comment\n\n0.5 0.5 0.5\n-1 0 1\n";
        let mdp: TabularMdp = text.parse().unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.r(1, 1), -1.0);
        assert_eq!(mdp.p(0, 1, 1), 0.8);
        let again: TabularMdp = mdp.to_string().parse().unwrap();
        assert_eq!(again, mdp);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let random = TabularMdp::random(3, 2, &mut rng);
        assert_eq!(random.to_string().parse::<TabularMdp>().unwrap(), random);
    }

    #[test]
    fn file_format_errors_carry_line_numbers() {
        let err = "states 2 actions 1\n0 1 0\n0 1\n"
            .parse::<TabularMdp>()
            .unwrap_err();
        assert_eq!(
            err,
            MdpError::Parse {
                line: 3,
                msg: "expected 3 values, found 2".into()
            }
        );
        assert!(matches!(
            "nodes 2\n".parse::<TabularMdp>(),
            Err(MdpError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            "states 1 actions 1\n0 0.5\n".parse::<TabularMdp>(),
            Err(MdpError::InvalidMdp(_))
        ));
    }

    #[test]
    fn best_deterministic_beats_every_random_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = TabularMdp::random(3, 2, &mut rng);
        let (_, best) = best_deterministic_policy(&mdp).unwrap();
        for _ in 0..50 {
            let policy = SoftmaxPolicy::random(3, 2, 3.0, &mut rng);
            assert!(average_reward(&mdp, &policy).unwrap() <= best + 1e-12);
        }
    }
}
