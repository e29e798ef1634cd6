//! Drivers for the simulator: the OPGD agent, the DDPG-style baseline and a
//! uniform random policy, plus the episode loop they share.
//!
//! Learned agents see 23 features per frame (see [`features`]) and output
//! `(steering, accel, brake)`. Gear follows a fixed rpm shift rule; clutch,
//! focus and meta are always 0.

mod baseline;
mod opgd;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{DenseNet, Head, NnError};
use crate::policy_opt::{OptError, Transition};
use crate::sim::sensors::{MAX_RANGE, TRACK_BEAMS};
use crate::sim::{EffectorCommand, SensorFrame, SimError, Simulator, Termination};

pub use baseline::{BaselineAgent, BaselineUpdate, DdpgConfig};
pub use opgd::{GaussianActor, NetCritic, OpgdAgent, OpgdAgentConfig};

/// Number of state features fed to the networks.
pub const FEATURES: usize = 4 + TRACK_BEAMS;
/// `(steering, accel, brake)`
pub const ACTIONS: usize = 3;
/// Divisor applied to speedX and speedY, km/h.
pub const SPEED_SCALE: f64 = 300.0;
pub const UPSHIFT_RPM: f64 = 6000.0;
pub const DOWNSHIFT_RPM: f64 = 2500.0;

/// Output squashing of the driving actor.
pub const ACTOR_HEADS: [Head; ACTIONS] = [Head::Tanh, Head::UnitInterval, Head::UnitInterval];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("buffer holds {have} records, update needs {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("tick {tick}: {source}")]
    Sim { tick: usize, source: SimError },
    #[error("tick {tick}: {source}")]
    Update {
        tick: usize,
        source: Box<AgentError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// `(angle, trackPos, speedX/300, speedY/300, track/200)`.
pub fn features(frame: &SensorFrame) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURES);
    out.push(frame.angle);
    out.push(frame.track_pos);
    out.push(frame.speed_x / SPEED_SCALE);
    out.push(frame.speed_y / SPEED_SCALE);
    out.extend(frame.track.iter().map(|d| d / MAX_RANGE));
    out
}

/// Rpm-threshold gearbox: up above 6000 rpm, down below 2500, never below
/// first gear.
pub fn shift_gear(frame: &SensorFrame) -> i32 {
    let gear = frame.gear.max(1);
    if frame.rpm > UPSHIFT_RPM && gear < 6 {
        gear + 1
    } else if frame.rpm < DOWNSHIFT_RPM && gear > 1 {
        gear - 1
    } else {
        gear
    }
}

/// Command from an action in actor output order, clamped to the effector ranges.
pub fn command(frame: &SensorFrame, action: &[f64]) -> EffectorCommand {
    EffectorCommand::drive(
        action[0].clamp(-1.0, 1.0),
        action[1].clamp(0.0, 1.0),
        action[2].clamp(0.0, 1.0),
        shift_gear(frame),
    )
    .expect("clamped values are in range")
}

/// The learned part of a command, in actor output order.
pub fn action_of(cmd: &EffectorCommand) -> Vec<f64> {
    vec![cmd.steering(), cmd.accel(), cmd.brake()]
}

/// Adds independent Gaussian noise to each action coordinate and clips to
/// the head's range.
pub(crate) fn perturb<R: Rng + ?Sized>(
    action: &mut [f64],
    heads: &[Head],
    sigma: f64,
    rng: &mut R,
) {
    if sigma <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    for (a, h) in action.iter_mut().zip(heads) {
        *a += noise.sample(rng);
        if let Some((lo, hi)) = h.bounds() {
            *a = a.clamp(lo, hi);
        }
    }
}

/// Record stored by the learned agents: features and actor-space action.
pub type Record = Transition<Vec<f64>, Vec<f64>>;

/// Common interface of everything that can drive the simulator.
pub trait Agent {
    fn act(&mut self, frame: &SensorFrame, explore: bool) -> EffectorCommand;

    fn observe(
        &mut self,
        frame: &SensorFrame,
        cmd: &EffectorCommand,
        reward: f64,
        next_frame: &SensorFrame,
        terminal: bool,
    );

    /// One learning update if enough data is stored; returns its loss.
    fn maybe_update(&mut self) -> Result<Option<f64>>;

    /// Called once after each episode.
    fn end_episode(&mut self) {}
}

/// Why [`run_episode`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Terminal(Termination),
    MaxTicks,
}

impl EpisodeEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeEnd::Terminal(t) => t.as_str(),
            EpisodeEnd::MaxTicks => "max_ticks",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    pub losses: Vec<f64>,
    pub total_reward: f64,
    pub end: EpisodeEnd,
}

impl EpisodeLog {
    pub fn ticks(&self) -> usize {
        self.rewards.len()
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty())
            .then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }
}

/// Runs act / step / observe / update for up to `max_ticks` ticks from the
/// simulator's current state. Exploration stays on throughout.
pub fn run_episode<A: Agent + ?Sized>(
    agent: &mut A,
    sim: &mut Simulator,
    max_ticks: usize,
) -> Result<EpisodeLog> {
    let mut log = EpisodeLog {
        rewards: Vec::with_capacity(max_ticks.min(1 << 16)),
        losses: Vec::new(),
        total_reward: 0.0,
        end: EpisodeEnd::MaxTicks,
    };
    let mut frame = sim.frame().clone();
    for tick in 0..max_ticks {
        let cmd = agent.act(&frame, true);
        let out = sim
            .step(&cmd)
            .map_err(|source| AgentError::Sim { tick, source })?;
        agent.observe(&frame, &cmd, out.reward, &out.frame, out.terminal());
        if let Some(loss) = agent.maybe_update().map_err(|e| AgentError::Update {
            tick,
            source: Box::new(e),
        })? {
            log.losses.push(loss);
        }
        log.rewards.push(out.reward);
        log.total_reward += out.reward;
        frame = out.frame;
        if let Some(t) = out.termination {
            log.end = EpisodeEnd::Terminal(t);
            break;
        }
    }
    agent.end_episode();
    Ok(log)
}

/// Uniform over the steering and pedal ranges each tick.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, frame: &SensorFrame, _explore: bool) -> EffectorCommand {
        let action = [
            self.rng.random_range(-1.0..=1.0),
            self.rng.random_range(0.0..=1.0),
            self.rng.random_range(0.0..=1.0),
        ];
        command(frame, &action)
    }

    fn observe(&mut self, _: &SensorFrame, _: &EffectorCommand, _: f64, _: &SensorFrame, _: bool) {}

    fn maybe_update(&mut self) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Writes networks as `<name>.bin` plus `agent.toml` metadata into `dir`.
pub(crate) fn save_checkpoint<M: Serialize>(
    dir: &Path,
    nets: &[(&str, &DenseNet)],
    meta: &M,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, net) in nets {
        net.save(dir.join(format!("{name}.bin")))?;
    }
    let text = toml::to_string(meta).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    fs::write(dir.join("agent.toml"), text)?;
    Ok(())
}

pub(crate) fn load_checkpoint<M: DeserializeOwned>(
    dir: &Path,
    names: &[&str],
) -> Result<(Vec<DenseNet>, M)> {
    let nets = names
        .iter()
        .map(|n| DenseNet::load(dir.join(format!("{n}.bin"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let text = fs::read_to_string(dir.join("agent.toml"))?;
    let meta = toml::from_str(&text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    Ok((nets, meta))
}

pub(crate) fn check_hidden(hidden: &[usize]) -> Result<()> {
    if hidden.contains(&0) {
        return Err(AgentError::InvalidConfig(
            "hidden widths must be positive".into(),
        ));
    }
    Ok(())
}

pub(crate) fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}
