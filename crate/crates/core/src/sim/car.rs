//! Car state, actuator commands and the kinematic bicycle integrator.

use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use super::SimError;

/// Wheel angle at full steering lock, radians.
pub const MAX_WHEEL_ANGLE: f64 = 0.366519;
pub const CAR_WIDTH: f64 = 1.9;
pub const MIN_GEAR: i32 = -1;
pub const MAX_GEAR: i32 = 6;
pub const MS_TO_KMH: f64 = 3.6;

/// Front wheel angle produced by a steering value in `[-1, 1]`.
pub fn wheel_angle(steering: f64) -> f64 {
    steering * MAX_WHEEL_ANGLE
}

/// Vehicle constants. Accelerations in m/s^2, drag in 1/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarParams {
    /// CG to front axle, m
    pub front_axle: f64,
    /// CG to rear axle, m
    pub rear_axle: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    /// linear drag coefficient on the track
    pub drag: f64,
    /// extra drag while off the track
    pub offtrack_drag: f64,
    pub wheel_radius: f64,
    /// reverse, neutral, then gears 1..=6
    pub gear_ratios: [f64; 8],
    pub final_drive: f64,
    pub idle_rpm: f64,
    pub fuel_capacity: f64,
    /// litres per second at full throttle
    pub fuel_rate: f64,
    /// damage points per metre driven off the track
    pub damage_rate: f64,
    /// fixed height of the mass centre above the surface, m
    pub ride_height: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            front_axle: 1.2,
            rear_axle: 1.4,
            max_accel: 6.0,
            max_brake: 10.0,
            drag: 0.1,
            offtrack_drag: 0.8,
            wheel_radius: 0.33,
            gear_ratios: [-3.5, 0.0, 3.3, 2.2, 1.6, 1.25, 1.0, 0.85],
            final_drive: 3.9,
            idle_rpm: 800.0,
            fuel_capacity: 60.0,
            fuel_rate: 0.02,
            damage_rate: 5.0,
            ride_height: 0.345,
        }
    }
}

impl CarParams {
    pub fn gear_ratio(&self, gear: i32) -> f64 {
        self.gear_ratios[(gear - MIN_GEAR) as usize]
    }

    /// Engine speed for a road speed in m/s and a gear.
    pub fn rpm(&self, speed: f64, gear: i32) -> f64 {
        let wheel = speed.abs() / self.wheel_radius;
        let engine = wheel * (self.gear_ratio(gear) * self.final_drive).abs() * 60.0
            / (2.0 * std::f64::consts::PI);
        engine.max(self.idle_rpm)
    }
}

/// Full dynamic state of the car. Speeds in km/h, distances in m, times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: Vec2,
    pub heading: f64,
    pub speed_x: f64,
    pub speed_y: f64,
    /// always zero in the plane
    pub speed_z: f64,
    pub wheel_spin: [f64; 4],
    pub gear: i32,
    pub rpm: f64,
    pub fuel: f64,
    pub damage: f64,
    pub dist_raced: f64,
    pub dist_from_start: f64,
    pub cur_lap_time: f64,
    pub last_lap_time: f64,
    /// last commanded focus direction, degrees
    pub focus: f64,
    pub seed: u64,
}

impl CarState {
    /// Signed speed along the car axis, m/s.
    pub fn longitudinal_speed(&self) -> f64 {
        self.speed_x / MS_TO_KMH
    }
}

/// Actuator values; every constructor enforces the effector ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectorCommand {
    accel: f64,
    brake: f64,
    clutch: f64,
    gear: i32,
    steering: f64,
    focus: f64,
    meta: u8,
}

impl Default for EffectorCommand {
    fn default() -> Self {
        Self {
            accel: 0.0,
            brake: 0.0,
            clutch: 0.0,
            gear: 1,
            steering: 0.0,
            focus: 0.0,
            meta: 0,
        }
    }
}

fn check_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<(), SimError> {
    if !(lo..=hi).contains(&v) {
        return Err(SimError::InvalidCommand {
            field: name,
            value: v.to_string(),
            range: format!("[{lo}, {hi}]"),
        });
    }
    Ok(())
}

impl EffectorCommand {
    pub fn new(
        accel: f64,
        brake: f64,
        clutch: f64,
        gear: i32,
        steering: f64,
        focus: f64,
        meta: u8,
    ) -> Result<Self, SimError> {
        check_range("accel", accel, 0.0, 1.0)?;
        check_range("brake", brake, 0.0, 1.0)?;
        check_range("clutch", clutch, 0.0, 1.0)?;
        check_range("steering", steering, -1.0, 1.0)?;
        check_range("focus", focus, -90.0, 90.0)?;
        if !(MIN_GEAR..=MAX_GEAR).contains(&gear) {
            return Err(SimError::InvalidCommand {
                field: "gear",
                value: gear.to_string(),
                range: format!("{{{MIN_GEAR}, ..., {MAX_GEAR}}}"),
            });
        }
        if meta > 1 {
            return Err(SimError::InvalidCommand {
                field: "meta",
                value: meta.to_string(),
                range: "{0, 1}".into(),
            });
        }
        Ok(Self {
            accel,
            brake,
            clutch,
            gear,
            steering,
            focus,
            meta,
        })
    }

    /// Pedals and steering with every other field at its default.
    pub fn drive(steering: f64, accel: f64, brake: f64, gear: i32) -> Result<Self, SimError> {
        Self::new(accel, brake, 0.0, gear, steering, 0.0, 0)
    }

    pub fn restart() -> Self {
        Self {
            meta: 1,
            ..Self::default()
        }
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }
    pub fn brake(&self) -> f64 {
        self.brake
    }
    pub fn clutch(&self) -> f64 {
        self.clutch
    }
    pub fn gear(&self) -> i32 {
        self.gear
    }
    pub fn steering(&self) -> f64 {
        self.steering
    }
    pub fn focus(&self) -> f64 {
        self.focus
    }
    pub fn meta(&self) -> u8 {
        self.meta
    }
}

/// Result of integrating the longitudinal dynamics over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Longitudinal {
    pub speed: f64,
    pub distance: f64,
}

/// Exact solution of `dv/dt = drive - brake * sgn(v) - k v` over `dt`.
/// The car does not reverse through zero under braking; once stopped it
/// stays stopped for the rest of the step.
pub(crate) fn integrate_longitudinal(
    v0: f64,
    drive: f64,
    brake: f64,
    k: f64,
    dt: f64,
) -> Longitudinal {
    if v0 == 0.0 && drive.abs() <= brake {
        return Longitudinal {
            speed: 0.0,
            distance: 0.0,
        };
    }
    let dir = if v0 != 0.0 {
        v0.signum()
    } else {
        drive.signum()
    };
    let a = drive - brake * dir;
    let (v_at, x_at): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = if k > 0.0 {
        let vinf = a / k;
        (
            Box::new(move |t: f64| vinf + (v0 - vinf) * (-k * t).exp()),
            Box::new(move |t: f64| vinf * t + (v0 - vinf) * (-(-k * t).exp_m1()) / k),
        )
    } else {
        (
            Box::new(move |t: f64| v0 + a * t),
            Box::new(move |t: f64| v0 * t + 0.5 * a * t * t),
        )
    };
    let v1 = v_at(dt);
    if v1 * dir >= 0.0 || v0 == 0.0 {
        return Longitudinal {
            speed: v1,
            distance: x_at(dt),
        };
    }
    // speed crosses zero inside the step: stop there
    let t_stop = if k > 0.0 {
        let vinf = a / k;
        ((vinf - v0) / vinf).ln() / k
    } else {
        -v0 / a
    };
    Longitudinal {
        speed: 0.0,
        distance: x_at(t_stop.clamp(0.0, dt)),
    }
}

/// Pose update for a constant wheel angle and a travelled path length.
/// Returns new position and heading.
pub(crate) fn advance_pose(
    params: &CarParams,
    position: Vec2,
    heading: f64,
    steering: f64,
    distance: f64,
) -> (Vec2, f64) {
    let beta = slip_angle(params, steering);
    let course = heading + beta;
    let turn = distance * beta.sin() / params.rear_axle;
    if turn.abs() < 1e-12 {
        return (
            position + Vec2::from_angle(course) * distance,
            heading + turn,
        );
    }
    let radius = params.rear_axle / beta.sin();
    let delta = Vec2::new(
        (course + turn).sin() - course.sin(),
        course.cos() - (course + turn).cos(),
    ) * radius;
    (position + delta, heading + turn)
}

/// Angle between the velocity at the mass centre and the car axis.
pub fn slip_angle(params: &CarParams, steering: f64) -> f64 {
    let ratio = params.rear_axle / (params.front_axle + params.rear_axle);
    (ratio * wheel_angle(steering).tan()).atan()
}

/// (speedX, speedY) in km/h at the mass centre for a longitudinal speed in m/s.
/// The rear wheels do not slip, so the longitudinal component is shared by
/// every point of the body.
pub(crate) fn speed_components(params: &CarParams, steering: f64, speed: f64) -> (f64, f64) {
    let beta = slip_angle(params, steering);
    (speed * MS_TO_KMH, speed * beta.tan() * MS_TO_KMH)
}

/// Path length of the mass centre for a longitudinal displacement.
pub(crate) fn path_length(params: &CarParams, steering: f64, longitudinal: f64) -> f64 {
    longitudinal / slip_angle(params, steering).cos()
}
