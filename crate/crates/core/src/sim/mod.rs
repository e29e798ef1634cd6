//! Deterministic 2D racing simulator.
//!
//! The car follows a kinematic bicycle model referenced at the mass centre:
//! rear wheels never slip, so the slip angle is
//! `beta = atan(l_r / (l_f + l_r) * tan(delta))` and the heading turns at
//! `u * tan(beta) / l_r` for longitudinal speed `u`. Within one step the
//! wheel angle is constant and the longitudinal speed follows
//! `du/dt = drive - brake * sgn(u) - k u`, which is integrated in closed form,
//! so the pose update is an exact circular arc.
//!
//! Sensors and effectors use the TORCS competition names and units; see
//! [`SensorFrame`] and [`EffectorCommand`].

pub mod car;
pub mod geometry;
pub mod sensors;
pub mod trace;
pub mod track;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use car::{CarParams, CarState, EffectorCommand, MAX_WHEEL_ANGLE};
pub use sensors::{sensors, SensorFrame};
pub use track::Track;

use car::{advance_pose, integrate_longitudinal, path_length, speed_components};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("track file line {line}: {msg}")]
    TrackParse { line: usize, msg: String },
    #[error("{field} = {value} outside {range}")]
    InvalidCommand {
        field: &'static str,
        value: String,
        range: String,
    },
    #[error("time step {0} outside (0, 0.1]")]
    InvalidDt(f64),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const DEFAULT_DT: f64 = 0.02;
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// control period, s
    pub dt: f64,
    pub car: CarParams,
    /// reward cost per damage point
    pub damage_penalty: f64,
    /// episode ends once damage exceeds this
    pub damage_limit: f64,
    /// episode ends once `|trackPos|` exceeds this
    pub off_track_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            car: CarParams::default(),
            damage_penalty: 1.0,
            damage_limit: 1000.0,
            off_track_limit: 1.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(SimError::InvalidDt(self.dt));
        }
        let c = &self.car;
        let positive = [
            ("car.front_axle", c.front_axle),
            ("car.rear_axle", c.rear_axle),
            ("car.wheel_radius", c.wheel_radius),
            ("car.final_drive", c.final_drive),
            ("off_track_limit", self.off_track_limit),
        ];
        let nonneg = [
            ("car.max_accel", c.max_accel),
            ("car.max_brake", c.max_brake),
            ("car.drag", c.drag),
            ("car.offtrack_drag", c.offtrack_drag),
            ("car.idle_rpm", c.idle_rpm),
            ("car.fuel_capacity", c.fuel_capacity),
            ("car.fuel_rate", c.fuel_rate),
            ("car.damage_rate", c.damage_rate),
            ("damage_penalty", self.damage_penalty),
            ("damage_limit", self.damage_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !c.ride_height.is_finite() || c.gear_ratios.iter().any(|g| !g.is_finite()) {
            return Err(SimError::InvalidConfig("non-finite car parameter".into()));
        }
        Ok(())
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    OffTrack,
    Damage,
    Restart,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::OffTrack => "off_track",
            Termination::Damage => "damage",
            Termination::Restart => "restart",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub state: CarState,
    pub frame: SensorFrame,
    pub reward: f64,
    pub termination: Option<Termination>,
}

impl Step {
    pub fn terminal(&self) -> bool {
        self.termination.is_some()
    }
}

/// Car parked at the start of the track, on the axis, facing along it.
/// The seed is recorded but the start pose does not depend on it.
pub fn reset(track: &Track, params: &CarParams, seed: u64) -> CarState {
    let (position, heading) = track.start();
    CarState {
        position,
        heading,
        speed_x: 0.0,
        speed_y: 0.0,
        speed_z: 0.0,
        wheel_spin: [0.0; 4],
        gear: 1,
        rpm: params.idle_rpm,
        fuel: params.fuel_capacity,
        damage: 0.0,
        dist_raced: 0.0,
        dist_from_start: 0.0,
        cur_lap_time: 0.0,
        last_lap_time: 0.0,
        focus: 0.0,
        seed,
    }
}

/// `speedX * (cos(angle) - |trackPos|) - damage_penalty * (damage increase)`.
pub fn reward(prev: &CarState, next: &CarState, frame: &SensorFrame, damage_penalty: f64) -> f64 {
    frame.speed_x * (frame.angle.cos() - frame.track_pos.abs())
        - damage_penalty * (next.damage - prev.damage)
}

/// Advances the car by one control period.
///
/// A restart request (`meta = 1`) leaves the car where it is and ends the
/// episode; callers reset.
pub fn step(
    track: &Track,
    config: &SimConfig,
    state: &CarState,
    cmd: &EffectorCommand,
) -> Result<Step, SimError> {
    let dt = config.dt;
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(SimError::InvalidDt(dt));
    }
    let p = &config.car;
    if cmd.meta() == 1 {
        let frame = sensors(p, state, track);
        return Ok(Step {
            state: state.clone(),
            frame,
            reward: 0.0,
            termination: Some(Termination::Restart),
        });
    }

    let was_off = track.project(state.position).lateral.abs() > track.half_width();
    let gear = cmd.gear();
    let thrust = if state.fuel > 0.0 {
        p.max_accel * cmd.accel()
    } else {
        0.0
    };
    let drive = match gear {
        -1 => -thrust,
        0 => 0.0,
        _ => thrust,
    };
    let drag = p.drag + if was_off { p.offtrack_drag } else { 0.0 };
    let lon = integrate_longitudinal(
        state.longitudinal_speed(),
        drive,
        p.max_brake * cmd.brake(),
        drag,
        dt,
    );
    let arc = path_length(p, cmd.steering(), lon.distance);
    let (position, heading) = advance_pose(p, state.position, state.heading, cmd.steering(), arc);
    let (speed_x, speed_y) = speed_components(p, cmd.steering(), lon.speed);

    let proj = track.project(position);
    let off = proj.lateral.abs() > track.half_width();
    let damage = state.damage + if off { p.damage_rate * arc.abs() } else { 0.0 };

    let mut cur_lap_time = state.cur_lap_time + dt;
    let mut last_lap_time = state.last_lap_time;
    let len = track.length();
    let dist_from_start = proj.along.max(0.0);
    if track.is_closed() && state.dist_from_start > 0.75 * len && dist_from_start < 0.25 * len {
        last_lap_time = cur_lap_time;
        cur_lap_time = 0.0;
    }

    let wheel = lon.speed.abs() / p.wheel_radius;
    let next = CarState {
        position,
        heading,
        speed_x,
        speed_y,
        speed_z: 0.0,
        wheel_spin: [wheel; 4],
        gear,
        rpm: p.rpm(lon.speed, gear),
        fuel: (state.fuel - p.fuel_rate * cmd.accel() * dt).max(0.0),
        damage,
        dist_raced: state.dist_raced + arc.abs(),
        dist_from_start,
        cur_lap_time,
        last_lap_time,
        focus: cmd.focus(),
        seed: state.seed,
    };
    let frame = sensors(p, &next, track);
    let r = reward(state, &next, &frame, config.damage_penalty);
    let termination = if frame.track_pos.abs() > config.off_track_limit {
        Some(Termination::OffTrack)
    } else if next.damage > config.damage_limit {
        Some(Termination::Damage)
    } else {
        None
    };
    Ok(Step {
        state: next,
        frame,
        reward: r,
        termination,
    })
}

/// A track, a configuration and the current car state.
#[derive(Debug, Clone)]
pub struct Simulator {
    track: Track,
    config: SimConfig,
    state: CarState,
    frame: SensorFrame,
    ticks: u64,
}

impl Simulator {
    pub fn new(track: Track, config: SimConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let state = reset(&track, &config.car, seed);
        let frame = sensors(&config.car, &state, &track);
        Ok(Self {
            track,
            config,
            state,
            frame,
            ticks: 0,
        })
    }

    pub fn reset(&mut self, seed: u64) -> &SensorFrame {
        self.state = reset(&self.track, &self.config.car, seed);
        self.frame = sensors(&self.config.car, &self.state, &self.track);
        self.ticks = 0;
        &self.frame
    }

    pub fn step(&mut self, cmd: &EffectorCommand) -> Result<Step, SimError> {
        let out = step(&self.track, &self.config, &self.state, cmd)?;
        self.state = out.state.clone();
        self.frame = out.frame.clone();
        self.ticks += 1;
        Ok(out)
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn frame(&self) -> &SensorFrame {
        &self.frame
    }

    /// Steps taken since the last reset.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }
}
