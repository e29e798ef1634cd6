//! DDPG-style actor-critic baseline.
//!
//! The critic regresses toward the SARSA-style target
//! `scale * r + lambda * Q'(s', mu'(s'))` built from target networks; the
//! actor follows the deterministic policy gradient `dQ/da * dmu/dtheta`.
//! Both use Adam, and the targets track the live networks with rate `tau`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    action_of, check_hidden, command, features, layer_sizes, load_checkpoint, perturb,
    save_checkpoint, Agent, AgentError, Record, Result, ACTOR_HEADS, FEATURES,
};
use crate::nn::{Adam, DenseNet, Head};
use crate::policy_opt::{InteractionBuffer, Transition};
use crate::sim::{EffectorCommand, SensorFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// target tracking rate
    pub tau: f64,
    /// discount
    pub lambda: f64,
    /// multiplier applied to rewards in the critic target
    pub reward_scale: f64,
    pub batch: usize,
    pub capacity: usize,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub hidden: Vec<usize>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau: 0.01,
            lambda: 0.99,
            reward_scale: 0.01,
            batch: 32,
            capacity: 20_000,
            sigma0: 0.2,
            sigma_decay: 0.999,
            hidden: vec![32, 32],
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("reward_scale", self.reward_scale),
            ("sigma0", self.sigma0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return bad(format!(
                "sigma_decay must lie in (0, 1], got {}",
                self.sigma_decay
            ));
        }
        if self.batch == 0 || self.capacity == 0 {
            return bad("batch and capacity must be positive".into());
        }
        check_hidden(&self.hidden)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DdpgMeta {
    kind: String,
    seed: u64,
    episodes: u64,
    sigma: f64,
    config: DdpgConfig,
}

/// Result of one baseline update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineUpdate {
    /// mean of `0.5 (Q - y)^2` before the critic step
    pub critic_loss: f64,
    /// mean `Q(s, mu(s))` before the actor step
    pub actor_value: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineAgent {
    actor: DenseNet,
    critic: DenseNet,
    actor_target: DenseNet,
    critic_target: DenseNet,
    actor_opt: Adam,
    critic_opt: Adam,
    buffer: InteractionBuffer<Record>,
    config: DdpgConfig,
    sigma: f64,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u64,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(a.len() + b.len());
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x
}

fn soft_update(target: &mut DenseNet, live: &DenseNet, tau: f64) -> Result<()> {
    let mixed = if tau == 1.0 {
        live.params().values().to_vec()
    } else {
        target
            .params()
            .values()
            .iter()
            .zip(live.params().values())
            .map(|(t, l)| tau * l + (1.0 - tau) * t)
            .collect()
    };
    target.set_params(mixed)?;
    Ok(())
}

impl BaselineAgent {
    pub fn new(config: DdpgConfig, seed: u64) -> Result<Self> {
        Self::with_dims(config, seed, FEATURES, &ACTOR_HEADS)
    }

    pub fn with_dims(
        config: DdpgConfig,
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
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(actor.num_params(), config.actor_lr),
            critic_opt: Adam::new(critic.num_params(), config.critic_lr),
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

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn actor_target(&self) -> &DenseNet {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &DenseNet {
        &self.critic_target
    }

    pub fn buffer(&self) -> &InteractionBuffer<Record> {
        &self.buffer
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

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

    /// Critic target for one record.
    pub fn target(&self, record: &Record) -> f64 {
        let r = self.config.reward_scale * record.reward;
        if self.config.lambda == 0.0 || record.terminal {
            return r;
        }
        let next_a = self
            .actor_target
            .forward(&record.next_state)
            .expect("state matches actor input");
        let q = self
            .critic_target
            .forward(&concat(&record.next_state, &next_a))
            .expect("critic input matches")[0];
        r + self.config.lambda * q
    }

    /// One critic step, one actor step and one target update on a sampled batch.
    pub fn update(&mut self) -> Result<BaselineUpdate> {
        let need = self.config.batch;
        if self.buffer.len() < need {
            return Err(AgentError::InsufficientData {
                have: self.buffer.len(),
                need,
            });
        }
        let batch: Vec<Record> = self
            .buffer
            .sample(need, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        let n = batch.len() as f64;

        let mut critic_grad = vec![0.0; self.critic.num_params()];
        let mut critic_loss = 0.0;
        for rec in &batch {
            let y = self.target(rec);
            let x = concat(&rec.state, &rec.action);
            let q = self.critic.forward(&x)?[0];
            let err = q - y;
            critic_loss += 0.5 * err * err / n;
            let g = self.critic.backward(&x, &[err / n])?;
            for (acc, v) in critic_grad.iter_mut().zip(g.params.values()) {
                *acc += v;
            }
        }
        let mut params = self.critic.params().values().to_vec();
        self.critic_opt.step(&mut params, &critic_grad);
        self.critic.set_params(params)?;

        let mut actor_grad = vec![0.0; self.actor.num_params()];
        let mut actor_value = 0.0;
        let state_dim = self.actor.input_dim();
        for rec in &batch {
            let a = self.actor.forward(&rec.state)?;
            let x = concat(&rec.state, &a);
            actor_value += self.critic.forward(&x)?[0] / n;
            let dq = self.critic.backward(&x, &[1.0])?;
            let dq_da: Vec<f64> = dq.input[state_dim..].iter().map(|v| -v / n).collect();
            let g = self.actor.backward(&rec.state, &dq_da)?;
            for (acc, v) in actor_grad.iter_mut().zip(g.params.values()) {
                *acc += v;
            }
        }
        let mut params = self.actor.params().values().to_vec();
        self.actor_opt.step(&mut params, &actor_grad);
        self.actor.set_params(params)?;

        soft_update(&mut self.actor_target, &self.actor, self.config.tau)?;
        soft_update(&mut self.critic_target, &self.critic, self.config.tau)?;
        Ok(BaselineUpdate {
            critic_loss,
            actor_value,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = DdpgMeta {
            kind: "ddpg".into(),
            seed: self.seed,
            episodes: self.episodes,
            sigma: self.sigma,
            config: self.config.clone(),
        };
        save_checkpoint(
            dir.as_ref(),
            &[
                ("actor", &self.actor),
                ("critic", &self.critic),
                ("actor_target", &self.actor_target),
                ("critic_target", &self.critic_target),
            ],
            &meta,
        )
    }

    /// Restores all four networks; optimiser moments and the buffer start fresh.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (nets, meta): (Vec<DenseNet>, DdpgMeta) = load_checkpoint(
            dir.as_ref(),
            &["actor", "critic", "actor_target", "critic_target"],
        )?;
        if meta.kind != "ddpg" {
            return Err(AgentError::Checkpoint(format!(
                "expected ddpg, found {}",
                meta.kind
            )));
        }
        meta.config.validate()?;
        let [actor, critic, actor_target, critic_target]: [DenseNet; 4] =
            nets.try_into().expect("four nets");
        Ok(Self {
            actor_opt: Adam::new(actor.num_params(), meta.config.actor_lr),
            critic_opt: Adam::new(critic.num_params(), meta.config.critic_lr),
            actor,
            critic,
            actor_target,
            critic_target,
            buffer: InteractionBuffer::new(meta.config.capacity),
            sigma: meta.sigma,
            config: meta.config,
            rng: ChaCha8Rng::seed_from_u64(meta.seed),
            seed: meta.seed,
            episodes: meta.episodes,
        })
    }
}

impl Agent for BaselineAgent {
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
        self.update().map(|u| Some(u.critic_loss))
    }

    fn end_episode(&mut self) {
        self.episodes += 1;
        self.sigma *= self.config.sigma_decay;
    }
}
