//! Experiment configuration, runs, CSV output and verification suites.
//!
//! # Config
//!
//! TOML. Every key has a default, so this is a complete config:
//!
//! ```toml
//! agent = "opgd"
//! episodes = 20
//! seeds = [0, 1]
//! ```
//!
//! Top-level keys: `agent` (`"opgd"`, `"ddpg"`, `"random"`, or a list of
//! them), `episodes`, `max_ticks`, `seeds`, `track` (path to a track file,
//! resolved against the config file's directory; omitted means the built-in
//! oval) and `out` (output directory). Tables `[opgd]`, `[ddpg]` and `[sim]`
//! hold [`OpgdAgentConfig`], [`DdpgConfig`] and [`SimConfig`].
//!
//! # Output
//!
//! For each agent kind `k`, under `out/k/`:
//!
//! * `seed_<n>.csv`: `episode,total_reward,mean_loss,ticks,termination`.
//!   `mean_loss` is empty when no update ran in that episode.
//! * `summary.csv`: `episode,seeds,reward_mean,reward_std,loss_mean,loss_std`,
//!   with population standard deviations across seeds.
//!
//! When several kinds run, `out/contrast.csv` holds
//! `agent,final_window,final_window_mean,final_quartile_mean,final_quartile_variance`
//! where the window statistic averages each seed's last `final_window`
//! episodes and the quartile statistics pool the last quarter of episodes
//! over all seeds.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    run_episode, Agent, AgentError, BaselineAgent, DdpgConfig, EpisodeLog, OpgdAgent,
    OpgdAgentConfig, RandomAgent,
};
use crate::mdp::{
    exact_policy_gradient, finite_difference_gradient, relative_error, SoftmaxPolicy, TabularMdp,
    DEFAULT_FD_STEP,
};
use crate::nn::{grad_check, grad_check_with, DenseNet, Head};
use crate::protocol::{
    encode_effectors, encode_sensors, parse_effectors, parse_sensors, ProtocolError,
};
use crate::sim::geometry::Vec2;
use crate::sim::sensors::{sensors, SensorFrame, MAX_RANGE, TRACK_BEAM_ANGLES};
use crate::sim::{
    reset, step, CarParams, EffectorCommand, SimConfig, SimError, Simulator, Track, MAX_WHEEL_ANGLE,
};

/// The effector conformance corpus shipped with the crate.
pub const EFFECTOR_CORPUS: &str = include_str!("../conformance/effectors.txt");

/// Episodes per seed averaged by the final-window statistic.
pub const FINAL_WINDOW: usize = 20;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    fn config(field: &str, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Opgd,
    Ddpg,
    Random,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Opgd => "opgd",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Random => "random",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent kind or several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentSpec {
    One(AgentKind),
    Many(Vec<AgentKind>),
}

impl AgentSpec {
    pub fn kinds(&self) -> Vec<AgentKind> {
        match self {
            AgentSpec::One(k) => vec![*k],
            AgentSpec::Many(ks) => ks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentSpec,
    pub episodes: usize,
    pub max_ticks: usize,
    pub seeds: Vec<u64>,
    pub track: Option<PathBuf>,
    pub out: PathBuf,
    pub opgd: OpgdAgentConfig,
    pub ddpg: DdpgConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentSpec::One(AgentKind::Opgd),
            episodes: 200,
            max_ticks: 250,
            seeds: vec![0, 1, 2, 3, 4],
            track: None,
            out: PathBuf::from("results"),
            opgd: OpgdAgentConfig::default(),
            ddpg: DdpgConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config; a relative `track` path is resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // toml reports the offending key inside the message; surface it as the field
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            HarnessError::Config { field, msg }
        })?;
        if let (Some(track), Some(base)) = (&config.track, base) {
            if track.is_relative() {
                config.track = Some(base.join(track));
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.agent.kinds().is_empty() {
            return Err(HarnessError::config(
                "agent",
                "at least one agent kind is required",
            ));
        }
        if self.episodes == 0 {
            return Err(HarnessError::config("episodes", "must be positive"));
        }
        if self.max_ticks == 0 {
            return Err(HarnessError::config("max_ticks", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "must not be empty"));
        }
        if let Some(track) = &self.track {
            if !track.is_file() {
                return Err(HarnessError::config(
                    "track",
                    format!("{} does not exist", track.display()),
                ));
            }
        }
        self.opgd
            .validate()
            .map_err(|e| HarnessError::config("opgd", e.to_string()))?;
        self.ddpg
            .validate()
            .map_err(|e| HarnessError::config("ddpg", e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| HarnessError::config("sim", e.to_string()))?;
        Ok(())
    }

    pub fn load_track(&self) -> Result<Track> {
        match &self.track {
            None => Ok(Track::default_oval()),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                text.parse::<Track>()
                    .map_err(|e| HarnessError::config("track", e.to_string()))
            }
        }
    }
}

/// One row of a per-seed CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    pub ticks: usize,
    pub termination: &'static str,
}

impl EpisodeRow {
    fn from_log(episode: usize, log: &EpisodeLog) -> Self {
        Self {
            episode,
            total_reward: log.total_reward,
            mean_loss: log.mean_loss(),
            ticks: log.ticks(),
            termination: log.end.as_str(),
        }
    }
}

/// Rows of every seed for one agent kind, in seed order.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub kind: AgentKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<Vec<EpisodeRow>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastRow {
    pub kind: AgentKind,
    pub final_window_mean: f64,
    pub final_quartile_mean: f64,
    pub final_quartile_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub runs: Vec<AgentRun>,
    pub contrast: Vec<ContrastRow>,
    pub files: Vec<PathBuf>,
}

fn make_agent(kind: AgentKind, config: &ExperimentConfig, seed: u64) -> Result<Box<dyn Agent>> {
    Ok(match kind {
        AgentKind::Opgd => Box::new(OpgdAgent::new(config.opgd.clone(), seed)?),
        AgentKind::Ddpg => Box::new(BaselineAgent::new(config.ddpg.clone(), seed)?),
        AgentKind::Random => Box::new(RandomAgent::new(seed)),
    })
}

/// All episodes of one agent kind for one seed.
pub fn run_seed(
    kind: AgentKind,
    config: &ExperimentConfig,
    track: &Track,
    seed: u64,
) -> Result<Vec<EpisodeRow>> {
    let mut agent = make_agent(kind, config, seed)?;
    let mut sim = Simulator::new(track.clone(), config.sim.clone(), seed)?;
    let mut rows = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        sim.reset(seed);
        let log = run_episode(agent.as_mut(), &mut sim, config.max_ticks)?;
        rows.push(EpisodeRow::from_log(episode, &log));
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_seed_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "episode",
        "total_reward",
        "mean_loss",
        "ticks",
        "termination",
    ])?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.total_reward.to_string(),
            fmt_opt(r.mean_loss),
            r.ticks.to_string(),
            r.termination.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Mean and population standard deviation; `None` for no values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn write_summary_csv(path: &Path, run: &AgentRun) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "episode",
        "seeds",
        "reward_mean",
        "reward_std",
        "loss_mean",
        "loss_std",
    ])?;
    let episodes = run.rows.first().map_or(0, Vec::len);
    for ep in 0..episodes {
        let rewards: Vec<f64> = run.rows.iter().map(|r| r[ep].total_reward).collect();
        let losses: Vec<f64> = run.rows.iter().filter_map(|r| r[ep].mean_loss).collect();
        let (rm, rs) = mean_std(&rewards).expect("at least one seed");
        let loss = mean_std(&losses);
        w.write_record([
            ep.to_string(),
            rewards.len().to_string(),
            rm.to_string(),
            rs.to_string(),
            fmt_opt(loss.map(|l| l.0)),
            fmt_opt(loss.map(|l| l.1)),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Final-window and final-quartile statistics of one agent's rewards.
pub fn contrast_row(run: &AgentRun, window: usize) -> ContrastRow {
    let episodes = run.rows.first().map_or(0, Vec::len);
    let window = window.min(episodes).max(1);
    let per_seed: Vec<f64> = run
        .rows
        .iter()
        .map(|rows| {
            let tail = &rows[rows.len() - window..];
            tail.iter().map(|r| r.total_reward).sum::<f64>() / tail.len() as f64
        })
        .collect();
    let quarter = (episodes / 4).max(1);
    let pooled: Vec<f64> = run
        .rows
        .iter()
        .flat_map(|rows| rows[rows.len() - quarter..].iter().map(|r| r.total_reward))
        .collect();
    let (q_mean, q_std) = mean_std(&pooled).unwrap_or((f64::NAN, f64::NAN));
    ContrastRow {
        kind: run.kind,
        final_window_mean: mean_std(&per_seed).map_or(f64::NAN, |m| m.0),
        final_quartile_mean: q_mean,
        final_quartile_variance: q_std * q_std,
    }
}

pub fn write_contrast_csv(path: &Path, rows: &[ContrastRow], window: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "agent",
        "final_window",
        "final_window_mean",
        "final_quartile_mean",
        "final_quartile_variance",
    ])?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            window.to_string(),
            r.final_window_mean.to_string(),
            r.final_quartile_mean.to_string(),
            r.final_quartile_variance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Runs every configured agent kind over every seed and writes the CSVs.
/// Seeds run in parallel threads; results are identical to a sequential run.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let track = config.load_track()?;
    create_dir(&config.out)?;
    let mut report = RunReport {
        runs: Vec::new(),
        contrast: Vec::new(),
        files: Vec::new(),
    };
    let kinds = config.agent.kinds();
    for &kind in &kinds {
        let dir = config.out.join(kind.as_str());
        create_dir(&dir)?;
        let rows = std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .seeds
                .iter()
                .map(|&seed| {
                    let track = &track;
                    scope.spawn(move || run_seed(kind, config, track, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        for (seed, seed_rows) in config.seeds.iter().zip(&rows) {
            let path = dir.join(format!("seed_{seed}.csv"));
            write_seed_csv(&path, seed_rows)?;
            report.files.push(path);
        }
        let agent_run = AgentRun {
            kind,
            seeds: config.seeds.clone(),
            rows,
        };
        let path = dir.join("summary.csv");
        write_summary_csv(&path, &agent_run)?;
        report.files.push(path);
        report.contrast.push(contrast_row(&agent_run, FINAL_WINDOW));
        report.runs.push(agent_run);
    }
    if kinds.len() > 1 {
        let path = config.out.join("contrast.csv");
        write_contrast_csv(&path, &report.contrast, FINAL_WINDOW)?;
        report.files.push(path);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// verification suites

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Theorem,
    GradCheck,
    Sim,
    Protocol,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Theorem,
        Suite::GradCheck,
        Suite::Sim,
        Suite::Protocol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem => "theorem",
            Suite::GradCheck => "gradcheck",
            Suite::Sim => "sim",
            Suite::Protocol => "protocol",
        }
    }

    /// `"all"` expands to every suite.
    pub fn parse_list(name: &str) -> Option<Vec<Suite>> {
        match name {
            "all" => Some(Suite::ALL.to_vec()),
            _ => Suite::ALL
                .iter()
                .find(|s| s.name() == name)
                .map(|s| vec![*s]),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Corrupt the analytic gradients under test; the theorem and gradcheck
    /// suites must then fail.
    pub negative_control: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            passed: 0,
            total: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.failures.len() < 10 {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.ok() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {}: {}/{}",
            self.suite.name(),
            self.passed,
            self.total
        )?;
        for msg in &self.failures {
            write!(f, "\n  {msg}")?;
        }
        Ok(())
    }
}

pub const THEOREM_CASES: usize = 50;
pub const THEOREM_TOL: f64 = 1e-6;
pub const GRADCHECK_NETS: usize = 100;
pub const SIM_POSES: usize = 1000;
pub const BEAM_TOL: f64 = 1e-9;
pub const SIM_TICKS: usize = 10_000;
pub const CODEC_CASES: usize = 1000;

pub fn verify(suites: &[Suite], opts: VerifyOptions) -> Vec<SuiteReport> {
    suites
        .iter()
        .map(|s| match s {
            Suite::Theorem => verify_theorem(opts),
            Suite::GradCheck => verify_gradcheck(opts),
            Suite::Sim => verify_sim(opts),
            Suite::Protocol => verify_protocol(opts),
        })
        .collect()
}

/// Exact gradient against central differences on random ergodic MDPs.
pub fn verify_theorem(opts: VerifyOptions) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Theorem);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for case in 0..THEOREM_CASES {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(2..=4);
        let mdp = TabularMdp::random(ns, na, &mut rng);
        let policy = SoftmaxPolicy::random(ns, na, 1.0, &mut rng);
        let result = exact_policy_gradient(&mdp, &policy).and_then(|mut exact| {
            if opts.negative_control {
                exact[(0, 0)] = -exact[(0, 0)];
            }
            let fd = finite_difference_gradient(&mdp, &policy, DEFAULT_FD_STEP)?;
            Ok(relative_error(&exact, &fd))
        });
        match result {
            Ok(err) => report.check(err <= THEOREM_TOL, || {
                format!("case {case} ({ns}x{na}): relative error {err:e}")
            }),
            Err(e) => report.check(false, || format!("case {case}: {e}")),
        }
    }
    report
}

/// Backpropagation against central differences on random networks.
pub fn verify_gradcheck(opts: VerifyOptions) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::GradCheck);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let heads = [Head::Identity, Head::Tanh, Head::UnitInterval];
    for case in 0..GRADCHECK_NETS {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        sizes.extend((0..depth).map(|_| rng.random_range(1..=8)));
        let out = *sizes.last().expect("non-empty");
        let head: Vec<Head> = (0..out).map(|_| heads[rng.random_range(0..3)]).collect();
        let net = DenseNet::new(&sizes, &head, &mut rng).expect("valid sizes");
        let seed = rng.random();
        let rep = if opts.negative_control {
            grad_check_with(&net, 3, seed, |net, x, up| {
                let (mut p, mut i) = net
                    .backward_with(net.params().values(), x, up)
                    .expect("shapes match");
                p.iter_mut().for_each(|v| *v = -*v);
                i.iter_mut().for_each(|v| *v = -*v);
                (p, i)
            })
        } else {
            grad_check(&net, 3, seed)
        };
        report.check(rep.passed(), || {
            format!("net {case} {sizes:?}: relative error {:e}", rep.max_error())
        });
    }
    report
}

/// Random pose on or near a track, for sensor checks.
pub fn random_pose<R: Rng + ?Sized>(track: &Track, rng: &mut R) -> (Vec2, f64) {
    let pts = track.centerline();
    let i = rng.random_range(0..pts.len());
    let a = pts[i];
    let b = pts[(i + 1) % pts.len()];
    let u: f64 = rng.random();
    let along = a + (b - a) * u;
    let normal = (b - a).normalized().perp();
    let lateral = rng.random_range(-0.95..0.95) * track.half_width();
    (
        along + normal * lateral,
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

pub fn verify_sim(opts: VerifyOptions) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Sim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let track = Track::default_oval();
    let params = CarParams::default();

    report.check(MAX_WHEEL_ANGLE == 0.366519, || {
        format!("wheel angle constant {MAX_WHEEL_ANGLE}")
    });

    let mut state = reset(&track, &params, 0);
    for pose in 0..SIM_POSES {
        let (p, heading) = random_pose(&track, &mut rng);
        state.position = p;
        state.heading = heading;
        let frame = sensors(&params, &state, &track);
        let grid = track.edge_segments();
        let worst = TRACK_BEAM_ANGLES
            .iter()
            .zip(&frame.track)
            .map(|(deg, got)| {
                let dir = Vec2::from_angle(heading + deg.to_radians());
                let want = grid
                    .iter()
                    .filter_map(|(a, b)| crate::sim::geometry::ray_segment(p, dir, *a, *b))
                    .fold(MAX_RANGE, f64::min);
                (got - want).abs()
            })
            .fold(0.0, f64::max);
        report.check(worst <= BEAM_TOL, || {
            format!("pose {pose}: beam error {worst:e}")
        });
    }

    let config = SimConfig::default();
    let mut state = reset(&track, &config.car, opts.seed);
    let mut bad = None;
    for tick in 0..SIM_TICKS {
        let cmd = EffectorCommand::drive(
            rng.random_range(-1.0..=1.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(-1..=6),
        )
        .expect("sampled in range");
        let out = step(&track, &config, &state, &cmd).expect("valid step");
        if let Some(v) = out.frame.range_violation() {
            bad = Some(format!("tick {tick}: {v}"));
            break;
        }
        state = if out.terminal() {
            reset(&track, &config.car, opts.seed)
        } else {
            out.state
        };
    }
    report.check(bad.is_none(), || bad.clone().unwrap_or_default());
    report
}

/// Uniformly random frame within the sensor ranges.
pub fn random_frame<R: Rng + ?Sized>(rng: &mut R) -> SensorFrame {
    let mut f = SensorFrame {
        angle: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        cur_lap_time: rng.random_range(0.0..1e3),
        damage: rng.random_range(0.0..1e4),
        dist_from_start: rng.random_range(0.0..1e4),
        dist_raced: rng.random_range(0.0..1e5),
        fuel: rng.random_range(0.0..100.0),
        gear: rng.random_range(-1..=6),
        last_lap_time: rng.random_range(0.0..1e3),
        race_pos: rng.random_range(1..=20),
        rpm: rng.random_range(0.0..1e4),
        speed_x: rng.random_range(-300.0..300.0),
        speed_y: rng.random_range(-50.0..50.0),
        speed_z: rng.random_range(-5.0..5.0),
        track_pos: rng.random_range(-1.0..=1.0),
        z: rng.random_range(-1.0..1.0),
        ..SensorFrame::default()
    };
    f.focus
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.0..=MAX_RANGE));
    f.track
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.0..=MAX_RANGE));
    f.opponents
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.0..=MAX_RANGE));
    f.wheel_spin_vel
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.0..500.0));
    f
}

pub fn random_command<R: Rng + ?Sized>(rng: &mut R) -> EffectorCommand {
    EffectorCommand::new(
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..=1.0),
        rng.random_range(-1..=6),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-90.0..=90.0),
        rng.random_range(0..=1),
    )
    .expect("sampled in range")
}

/// Expected outcome of a corpus line.
fn corpus_outcome(result: &std::result::Result<EffectorCommand, ProtocolError>) -> &'static str {
    match result {
        Ok(_) => "ok",
        Err(ProtocolError::Range { .. }) => "range",
        Err(ProtocolError::UnknownField(_)) => "unknown",
        Err(_) => "parse",
    }
}

/// `(expected, line)` pairs of the effector conformance corpus.
pub fn effector_corpus() -> Vec<(&'static str, &'static str)> {
    EFFECTOR_CORPUS
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_once('\t').expect("corpus lines are tab separated"))
        .collect()
}

pub fn verify_protocol(opts: VerifyOptions) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Protocol);
    for (expected, line) in effector_corpus() {
        let got = corpus_outcome(&parse_effectors(line));
        report.check(got == expected, || {
            format!("corpus {line:?}: expected {expected}, got {got}")
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for case in 0..CODEC_CASES {
        let frame = random_frame(&mut rng);
        let back = parse_sensors(&encode_sensors(&frame));
        report.check(back.as_ref().is_ok_and(|b| *b == frame), || {
            format!("sensor roundtrip {case}: {back:?}")
        });
        let cmd = random_command(&mut rng);
        let back = parse_effectors(&encode_effectors(&cmd));
        report.check(back.as_ref().is_ok_and(|b| *b == cmd), || {
            format!("effector roundtrip {case}: {back:?}")
        });
    }
    report
}
