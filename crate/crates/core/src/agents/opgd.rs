//! The OPGD driver: an actor network for the policy mean, a critic network
//! over `(state, action)`, and the orthogonality-residual update.
//!
//! The policy is Gaussian around the actor output with the current
//! exploration scale `sigma`, so `grad pi(a|s) = pi(a|s) J_mu^T (a - mu) / sigma^2`.
//! The actor factor of the chain rule, `dQ/da * da/dtheta_a`, pulls the
//! critic's action gradient back through the actor mean.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    action_of, check_hidden, command, features, layer_sizes, load_checkpoint, perturb,
    save_checkpoint, Agent, AgentError, Record, Result, ACTOR_HEADS, FEATURES,
};
use crate::nn::{DenseNet, Head};
use crate::policy_opt::{
    opgd_step, CriticEval, DifferentiableCritic, InteractionBuffer, OpgdConfig, ScoredPolicy,
    Transition,
};
use crate::sim::{EffectorCommand, SensorFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpgdAgentConfig {
    /// Step size. Density gradients of the Gaussian policy are large, so the
    /// default is far below the tabular one; 1e-3 saturates the networks on
    /// the first update.
    pub eta: f64,
    pub batch: usize,
    pub capacity: usize,
    /// initial exploration scale
    pub sigma0: f64,
    /// per-episode multiplier of the exploration scale
    pub sigma_decay: f64,
    pub hidden: Vec<usize>,
}

impl Default for OpgdAgentConfig {
    fn default() -> Self {
        let base = OpgdConfig::default();
        Self {
            eta: 1e-7,
            batch: base.batch,
            capacity: base.capacity,
            sigma0: 0.2,
            sigma_decay: 0.999,
            hidden: vec![32, 32],
        }
    }
}

impl OpgdAgentConfig {
    pub fn validate(&self) -> Result<()> {
        OpgdConfig {
            eta: self.eta,
            batch: self.batch,
            capacity: self.capacity,
            horizon: 1,
        }
        .validate()?;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(AgentError::InvalidConfig(format!(
                "sigma0 must be positive, got {}",
                self.sigma0
            )));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "sigma_decay must lie in (0, 1], got {}",
                self.sigma_decay
            )));
        }
        check_hidden(&self.hidden)
    }
}

/// Gaussian policy `N(mu(s), sigma^2 I)` with `mu` given by a network.
pub struct GaussianActor<'a> {
    pub net: &'a DenseNet,
    pub sigma: f64,
}

impl GaussianActor<'_> {
    pub fn density(&self, params: &[f64], state: &[f64], action: &[f64]) -> f64 {
        let mu = self
            .net
            .forward_with(params, state)
            .expect("state matches actor input");
        gaussian_density(&mu, action, self.sigma)
    }
}

fn gaussian_density(mu: &[f64], action: &[f64], sigma: f64) -> f64 {
    let var = sigma * sigma;
    let norm = (2.0 * std::f64::consts::PI * var).sqrt();
    mu.iter()
        .zip(action)
        .map(|(m, a)| (-(a - m) * (a - m) / (2.0 * var)).exp() / norm)
        .product()
}

impl ScoredPolicy<Vec<f64>, Vec<f64>> for GaussianActor<'_> {
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn prob_gradient(&self, params: &[f64], state: &Vec<f64>, action: &Vec<f64>) -> Vec<f64> {
        let mu = self
            .net
            .forward_with(params, state)
            .expect("state matches actor input");
        let p = gaussian_density(&mu, action, self.sigma);
        let var = self.sigma * self.sigma;
        let upstream: Vec<f64> = mu
            .iter()
            .zip(action)
            .map(|(m, a)| p * (a - m) / var)
            .collect();
        self.net
            .backward_with(params, state, &upstream)
            .expect("shapes match")
            .0
    }

    fn action_vjp(&self, params: &[f64], state: &Vec<f64>, cotangent: &[f64]) -> Vec<f64> {
        self.net
            .backward_with(params, state, cotangent)
            .expect("shapes match")
            .0
    }
}

/// Critic network evaluated on `state ++ action`.
pub struct NetCritic<'a> {
    pub net: &'a DenseNet,
}

impl NetCritic<'_> {
    fn input(state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(state.len() + action.len());
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        x
    }
}

impl DifferentiableCritic<Vec<f64>, Vec<f64>> for NetCritic<'_> {
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn value(&self, params: &[f64], state: &Vec<f64>, action: &Vec<f64>) -> f64 {
        self.net
            .forward_with(params, &Self::input(state, action))
            .expect("critic input matches")[0]
    }

    fn evaluate(&self, params: &[f64], state: &Vec<f64>, action: &Vec<f64>) -> CriticEval {
        let x = Self::input(state, action);
        let value = self
            .net
            .forward_with(params, &x)
            .expect("critic input matches")[0];
        let (param_grad, input_grad) = self
            .net
            .backward_with(params, &x, &[1.0])
            .expect("critic input matches");
        CriticEval {
            value,
            param_grad,
            action_grad: input_grad[state.len()..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OpgdMeta {
    kind: String,
    seed: u64,
    episodes: u64,
    sigma: f64,
    config: OpgdAgentConfig,
}

#[derive(Debug, Clone)]
pub struct OpgdAgent {
    actor: DenseNet,
    critic: DenseNet,
    buffer: InteractionBuffer<Record>,
    config: OpgdAgentConfig,
    sigma: f64,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u64,
}

impl OpgdAgent {
    /// Driving agent with randomly initialised networks.
    pub fn new(config: OpgdAgentConfig, seed: u64) -> Result<Self> {
        Self::with_dims(config, seed, FEATURES, &ACTOR_HEADS)
    }

    /// Agent for arbitrary state and action sizes; the action size is the
    /// number of actor heads.
    pub fn with_dims(
        config: OpgdAgentConfig,
        seed: u64,
        state_dim: usize,
        heads: &[Head],
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = DenseNet::new(
            &layer_sizes(state_dim, &config.hidden, heads.len()),
            heads,
            &mut rng,
        )?;
        let critic = DenseNet::new(
            &layer_sizes(state_dim + heads.len(), &config.hidden, 1),
            &[Head::Identity],
            &mut rng,
        )?;
        Ok(Self {
            actor,
            critic,
            buffer: InteractionBuffer::new(config.capacity),
            sigma: config.sigma0,
            config,
            rng,
            seed,
            episodes: 0,
        })
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    pub fn buffer(&self) -> &InteractionBuffer<Record> {
        &self.buffer
    }

    pub fn config(&self) -> &OpgdAgentConfig {
        &self.config
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Actor output, plus clipped Gaussian noise when exploring.
    pub fn act_features(&mut self, state: &[f64], explore: bool) -> Vec<f64> {
        let mut a = self
            .actor
            .forward(state)
            .expect("state matches actor input");
        if explore {
            perturb(&mut a, self.actor.heads(), self.sigma, &mut self.rng);
        }
        a
    }

    pub fn observe_record(&mut self, record: Record) {
        self.buffer.push(record);
    }

    /// One OPGD step on a sampled batch; returns the pre-step loss.
    pub fn update(&mut self) -> Result<f64> {
        let need = self.config.batch;
        if self.buffer.len() < need {
            return Err(AgentError::InsufficientData {
                have: self.buffer.len(),
                need,
            });
        }
        let batch: Vec<&Transition<_, _>> = self.buffer.sample(need, &mut self.rng);
        let policy = GaussianActor {
            net: &self.actor,
            sigma: self.sigma,
        };
        let critic = NetCritic { net: &self.critic };
        let step = opgd_step(
            &policy,
            &critic,
            self.actor.params(),
            self.critic.params(),
            &batch,
            self.config.eta,
        )?;
        self.actor.set_params(step.theta_a.into_values())?;
        self.critic.set_params(step.theta_q.into_values())?;
        Ok(step.loss)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = OpgdMeta {
            kind: "opgd".into(),
            seed: self.seed,
            episodes: self.episodes,
            sigma: self.sigma,
            config: self.config.clone(),
        };
        save_checkpoint(
            dir.as_ref(),
            &[("actor", &self.actor), ("critic", &self.critic)],
            &meta,
        )
    }

    /// Restores networks, exploration scale and episode count. The buffer
    /// starts empty and the noise stream restarts from the seed.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (mut nets, meta): (_, OpgdMeta) = load_checkpoint(dir.as_ref(), &["actor", "critic"])?;
        if meta.kind != "opgd" {
            return Err(AgentError::Checkpoint(format!(
                "expected opgd, found {}",
                meta.kind
            )));
        }
        meta.config.validate()?;
        let critic = nets.pop().expect("two nets");
        let actor = nets.pop().expect("two nets");
        Ok(Self {
            actor,
            critic,
            buffer: InteractionBuffer::new(meta.config.capacity),
            sigma: meta.sigma,
            config: meta.config,
            rng: ChaCha8Rng::seed_from_u64(meta.seed),
            seed: meta.seed,
            episodes: meta.episodes,
        })
    }
}

impl Agent for OpgdAgent {
    fn act(&mut self, frame: &SensorFrame, explore: bool) -> EffectorCommand {
        let a = self.act_features(&features(frame), explore);
        command(frame, &a)
    }

    fn observe(
        &mut self,
        frame: &SensorFrame,
        cmd: &EffectorCommand,
        reward: f64,
        next_frame: &SensorFrame,
        terminal: bool,
    ) {
        self.observe_record(Transition {
            state: features(frame),
            action: action_of(cmd),
            reward,
            next_state: features(next_frame),
            terminal,
        });
    }

    fn maybe_update(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.config.batch {
            return Ok(None);
        }
        self.update().map(Some)
    }

    fn end_episode(&mut self) {
        self.episodes += 1;
        self.sigma *= self.config.sigma_decay;
    }
}
