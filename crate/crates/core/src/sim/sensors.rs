//! The sensor frame and the rangefinder model.

use super::car::{CarParams, CarState};
use super::geometry::{wrap_angle, Vec2};
use super::track::Track;

pub const TRACK_BEAMS: usize = 19;
pub const FOCUS_BEAMS: usize = 5;
pub const OPPONENT_SENSORS: usize = 36;
pub const MAX_RANGE: f64 = 200.0;
/// Reading reported by every rangefinder while the car is off the track.
pub const OFF_TRACK_READING: f64 = -1.0;

/// Track beam directions in degrees relative to the car axis, positive to the left.
pub const TRACK_BEAM_ANGLES: [f64; TRACK_BEAMS] = [
    -90.0, -75.0, -60.0, -45.0, -30.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 30.0,
    45.0, 60.0, 75.0, 90.0,
];

/// Focus beam offsets in degrees around the commanded focus direction.
pub const FOCUS_OFFSETS: [f64; FOCUS_BEAMS] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// One tick of sensor readings, fields in wire order.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    /// Track axis direction minus car heading, rad, in `[-pi, pi)`; positive
    /// when the car points right of the axis, as in TORCS.
    pub angle: f64,
    /// s
    pub cur_lap_time: f64,
    pub damage: f64,
    /// m
    pub dist_from_start: f64,
    /// m
    pub dist_raced: f64,
    /// m
    pub focus: [f64; FOCUS_BEAMS],
    /// l
    pub fuel: f64,
    pub gear: i32,
    /// s
    pub last_lap_time: f64,
    /// m
    pub opponents: [f64; OPPONENT_SENSORS],
    pub race_pos: u32,
    pub rpm: f64,
    /// km/h
    pub speed_x: f64,
    pub speed_y: f64,
    pub speed_z: f64,
    /// m
    pub track: [f64; TRACK_BEAMS],
    pub track_pos: f64,
    /// rad/s
    pub wheel_spin_vel: [f64; 4],
    /// m
    pub z: f64,
}

impl Default for SensorFrame {
    fn default() -> Self {
        Self {
            angle: 0.0,
            cur_lap_time: 0.0,
            damage: 0.0,
            dist_from_start: 0.0,
            dist_raced: 0.0,
            focus: [0.0; FOCUS_BEAMS],
            fuel: 0.0,
            gear: 0,
            last_lap_time: 0.0,
            opponents: [MAX_RANGE; OPPONENT_SENSORS],
            race_pos: 1,
            rpm: 0.0,
            speed_x: 0.0,
            speed_y: 0.0,
            speed_z: 0.0,
            track: [0.0; TRACK_BEAMS],
            track_pos: 0.0,
            wheel_spin_vel: [0.0; 4],
            z: 0.0,
        }
    }
}

impl SensorFrame {
    pub fn is_off_track(&self) -> bool {
        self.track_pos.abs() > 1.0
    }

    /// Checks every field against its documented range. Rangefinders may
    /// also hold the off-track sentinel when `|trackPos| > 1`.
    pub fn range_violation(&self) -> Option<String> {
        let beam_ok = |v: f64| {
            (0.0..=MAX_RANGE).contains(&v) || (self.is_off_track() && v == OFF_TRACK_READING)
        };
        let nonneg = [
            ("curLapTime", self.cur_lap_time),
            ("damage", self.damage),
            ("distFromStart", self.dist_from_start),
            ("distRaced", self.dist_raced),
            ("fuel", self.fuel),
            ("lastLapTime", self.last_lap_time),
            ("rpm", self.rpm),
        ];
        if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&self.angle) {
            return Some(format!("angle {}", self.angle));
        }
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Some(format!("{name} {v}"));
            }
        }
        if let Some(v) = self.focus.iter().find(|v| !beam_ok(**v)) {
            return Some(format!("focus {v}"));
        }
        if let Some(v) = self.track.iter().find(|v| !beam_ok(**v)) {
            return Some(format!("track {v}"));
        }
        if let Some(v) = self
            .opponents
            .iter()
            .find(|v| !(0.0..=MAX_RANGE).contains(*v))
        {
            return Some(format!("opponents {v}"));
        }
        if let Some(v) = self
            .wheel_spin_vel
            .iter()
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Some(format!("wheelSpinVel {v}"));
        }
        if !(-1..=6).contains(&self.gear) {
            return Some(format!("gear {}", self.gear));
        }
        if self.race_pos < 1 {
            return Some(format!("racePos {}", self.race_pos));
        }
        for (name, v) in [
            ("speedX", self.speed_x),
            ("speedY", self.speed_y),
            ("speedZ", self.speed_z),
            ("trackPos", self.track_pos),
            ("z", self.z),
        ] {
            if !v.is_finite() {
                return Some(format!("{name} {v}"));
            }
        }
        None
    }
}

/// Distance along a beam to the nearest track edge, clipped to the sensor range.
pub fn beam(track: &Track, origin: Vec2, direction: f64) -> f64 {
    track
        .edge_grid()
        .cast(origin, Vec2::from_angle(direction), MAX_RANGE)
        .unwrap_or(MAX_RANGE)
        .min(MAX_RANGE)
}

/// Reads every sensor for a car state on a track.
pub fn sensors(params: &CarParams, state: &CarState, track: &Track) -> SensorFrame {
    let proj = track.project(state.position);
    let track_pos = proj.lateral / track.half_width();
    let off = track_pos.abs() > 1.0;
    let read = |deg: f64| {
        if off {
            OFF_TRACK_READING
        } else {
            beam(track, state.position, state.heading + deg.to_radians())
        }
    };
    SensorFrame {
        angle: wrap_angle(proj.axis_angle - state.heading),
        cur_lap_time: state.cur_lap_time,
        damage: state.damage,
        dist_from_start: state.dist_from_start,
        dist_raced: state.dist_raced,
        focus: FOCUS_OFFSETS.map(|d| read(state.focus + d)),
        fuel: state.fuel,
        gear: state.gear,
        last_lap_time: state.last_lap_time,
        opponents: [MAX_RANGE; OPPONENT_SENSORS],
        race_pos: 1,
        rpm: state.rpm,
        speed_x: state.speed_x,
        speed_y: state.speed_y,
        speed_z: state.speed_z,
        track: TRACK_BEAM_ANGLES.map(read),
        track_pos,
        wheel_spin_vel: state.wheel_spin,
        z: params.ride_height,
    }
}

/// Sensor names in wire order with their value counts.
pub const SENSOR_FIELDS: [(&str, usize); 19] = [
    ("angle", 1),
    ("curLapTime", 1),
    ("damage", 1),
    ("distFromStart", 1),
    ("distRaced", 1),
    ("focus", FOCUS_BEAMS),
    ("fuel", 1),
    ("gear", 1),
    ("lastLapTime", 1),
    ("opponents", OPPONENT_SENSORS),
    ("racePos", 1),
    ("rpm", 1),
    ("speedX", 1),
    ("speedY", 1),
    ("speedZ", 1),
    ("track", TRACK_BEAMS),
    ("trackPos", 1),
    ("wheelSpinVel", 4),
    ("z", 1),
];

impl SensorFrame {
    /// Values of each field in [`SENSOR_FIELDS`] order. Integer fields are
    /// widened exactly.
    pub fn groups(&self) -> [(&'static str, Vec<f64>); 19] {
        [
            ("angle", vec![self.angle]),
            ("curLapTime", vec![self.cur_lap_time]),
            ("damage", vec![self.damage]),
            ("distFromStart", vec![self.dist_from_start]),
            ("distRaced", vec![self.dist_raced]),
            ("focus", self.focus.to_vec()),
            ("fuel", vec![self.fuel]),
            ("gear", vec![self.gear as f64]),
            ("lastLapTime", vec![self.last_lap_time]),
            ("opponents", self.opponents.to_vec()),
            ("racePos", vec![self.race_pos as f64]),
            ("rpm", vec![self.rpm]),
            ("speedX", vec![self.speed_x]),
            ("speedY", vec![self.speed_y]),
            ("speedZ", vec![self.speed_z]),
            ("track", self.track.to_vec()),
            ("trackPos", vec![self.track_pos]),
            ("wheelSpinVel", self.wheel_spin_vel.to_vec()),
            ("z", vec![self.z]),
        ]
    }
}
