//! Line-based wire codec and a UDP request/response loop.
//!
//! A message is a sequence of groups `(name v1 v2 ...)` followed by a
//! newline. Values are decimal literals separated by single spaces inside a
//! group; the encoder puts no whitespace between groups and the parser
//! tolerates it. Numbers are printed in the shortest form that parses back to
//! the same `f64`, so `parse(encode(x)) == x` bit for bit.
//!
//! Sensor messages carry every field of [`SensorFrame`] in this order:
//! `angle curLapTime damage distFromStart distRaced focus(5) fuel gear
//! lastLapTime opponents(36) racePos rpm speedX speedY speedZ track(19)
//! trackPos wheelSpinVel(4) z`.
//!
//! Effector messages may carry any subset of `accel brake clutch gear
//! steering focus meta`, in any order, each at most once. Missing fields take
//! their defaults (`gear` 1, everything else 0), so an empty line is a valid
//! no-op command.
//!
//! The server answers each datagram with one line: the sensor frame after
//! stepping, or `(error <reason>)` if the request could not be used.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::Duration;

use thiserror::Error;

use crate::sim::sensors::{SENSOR_FIELDS, TRACK_BEAMS};
use crate::sim::{EffectorCommand, SensorFrame, SimError, Simulator};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("{field} = {value} violates range {bound}")]
    Range {
        field: String,
        value: String,
        bound: String,
    },
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

fn push_group(out: &mut String, name: &str, values: &[f64]) {
    out.push('(');
    out.push_str(name);
    for v in values {
        // Display for f64 is the shortest round-tripping decimal
        let _ = write!(out, " {v}");
    }
    out.push(')');
}

pub fn encode_sensors(frame: &SensorFrame) -> String {
    let mut out = String::with_capacity(1024);
    for (name, values) in frame.groups() {
        push_group(&mut out, name, &values);
    }
    out.push('\n');
    out
}

pub fn encode_effectors(cmd: &EffectorCommand) -> String {
    let mut out = String::with_capacity(96);
    for (name, v) in [
        ("accel", cmd.accel()),
        ("brake", cmd.brake()),
        ("clutch", cmd.clutch()),
        ("gear", cmd.gear() as f64),
        ("steering", cmd.steering()),
        ("focus", cmd.focus()),
        ("meta", cmd.meta() as f64),
    ] {
        push_group(&mut out, name, &[v]);
    }
    out.push('\n');
    out
}

/// Splits a line into `(name, values)` groups without interpreting names.
pub fn parse_groups(line: &str) -> Result<Vec<(&str, Vec<f64>)>> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut rest = line.trim_start();
    let mut groups = Vec::new();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix('(')
            .ok_or_else(|| ProtocolError::Parse(format!("expected '(' at {:?}", clip(rest))))?;
        let close = body
            .find(')')
            .ok_or_else(|| ProtocolError::Parse("unterminated group".into()))?;
        let inner = &body[..close];
        if inner.contains('(') {
            return Err(ProtocolError::Parse("nested '(' inside a group".into()));
        }
        let mut tokens = inner.split_ascii_whitespace();
        let name = tokens
            .next()
            .ok_or_else(|| ProtocolError::Parse("empty group".into()))?;
        if !name.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(ProtocolError::Parse(format!(
                "bad field name {:?}",
                clip(name)
            )));
        }
        let values = tokens
            .map(|t| parse_number(name, t))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(ProtocolError::Parse(format!("field {name} has no value")));
        }
        groups.push((name, values));
        rest = body[close + 1..].trim_start();
    }
    Ok(groups)
}

fn clip(s: &str) -> String {
    s.chars().take(24).collect()
}

fn parse_number(field: &str, token: &str) -> Result<f64> {
    let ok_chars = token
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'));
    let v: f64 = if ok_chars { token.parse().ok() } else { None }.ok_or_else(|| {
        ProtocolError::Parse(format!("field {field}: {:?} is not a number", clip(token)))
    })?;
    if !v.is_finite() {
        return Err(ProtocolError::Parse(format!(
            "field {field}: non-finite value"
        )));
    }
    Ok(v)
}

fn range_err(field: &str, value: f64, bound: &str) -> ProtocolError {
    ProtocolError::Range {
        field: field.to_string(),
        value: value.to_string(),
        bound: bound.to_string(),
    }
}

fn scalar(name: &str, values: &[f64]) -> Result<f64> {
    match values {
        [v] => Ok(*v),
        _ => Err(ProtocolError::Parse(format!(
            "field {name} takes 1 value, got {}",
            values.len()
        ))),
    }
}

fn integer(name: &str, v: f64, lo: i32, hi: i32, bound: &str) -> Result<i32> {
    if v.fract() != 0.0 || v < lo as f64 || v > hi as f64 {
        return Err(range_err(name, v, bound));
    }
    Ok(v as i32)
}

pub fn parse_effectors(line: &str) -> Result<EffectorCommand> {
    let mut accel = 0.0;
    let mut brake = 0.0;
    let mut clutch = 0.0;
    let mut gear = 1;
    let mut steering = 0.0;
    let mut focus = 0.0;
    let mut meta = 0;
    let mut seen = HashSet::new();
    for (name, values) in parse_groups(line)? {
        let v = match name {
            "accel" | "brake" | "clutch" | "gear" | "steering" | "focus" | "meta" => {
                scalar(name, &values)?
            }
            _ => return Err(ProtocolError::UnknownField(name.to_string())),
        };
        if !seen.insert(name) {
            return Err(ProtocolError::Parse(format!("duplicate field {name}")));
        }
        let unit = |v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(range_err(name, v, "[0, 1]"))
            }
        };
        match name {
            "accel" => accel = unit(v)?,
            "brake" => brake = unit(v)?,
            "clutch" => clutch = unit(v)?,
            "steering" if (-1.0..=1.0).contains(&v) => steering = v,
            "steering" => return Err(range_err(name, v, "[-1, 1]")),
            "focus" if (-90.0..=90.0).contains(&v) => focus = v,
            "focus" => return Err(range_err(name, v, "[-90, 90]")),
            "gear" => gear = integer(name, v, -1, 6, "{-1, 0, 1, ..., 6}")?,
            "meta" => meta = integer(name, v, 0, 1, "{0, 1}")? as u8,
            _ => unreachable!(),
        }
    }
    EffectorCommand::new(accel, brake, clutch, gear, steering, focus, meta)
        .map_err(|e| ProtocolError::Parse(e.to_string()))
}

/// Parses a complete sensor message; every field must appear exactly once,
/// in any order, and pass the sensor range checks.
pub fn parse_sensors(line: &str) -> Result<SensorFrame> {
    let mut frame = SensorFrame::default();
    let mut seen = HashSet::new();
    for (name, values) in parse_groups(line)? {
        let arity = SENSOR_FIELDS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| *k)
            .ok_or_else(|| ProtocolError::UnknownField(name.to_string()))?;
        if values.len() != arity {
            return Err(ProtocolError::Parse(format!(
                "field {name} takes {arity} values, got {}",
                values.len()
            )));
        }
        if !seen.insert(name) {
            return Err(ProtocolError::Parse(format!("duplicate field {name}")));
        }
        let v = values[0];
        match name {
            "angle" => frame.angle = v,
            "curLapTime" => frame.cur_lap_time = v,
            "damage" => frame.damage = v,
            "distFromStart" => frame.dist_from_start = v,
            "distRaced" => frame.dist_raced = v,
            "focus" => frame.focus.copy_from_slice(&values),
            "fuel" => frame.fuel = v,
            "gear" => frame.gear = integer(name, v, -1, 6, "{-1, 0, 1, ..., 6}")?,
            "lastLapTime" => frame.last_lap_time = v,
            "opponents" => frame.opponents.copy_from_slice(&values),
            "racePos" => frame.race_pos = integer(name, v, 1, i32::MAX, "{1, 2, ...}")? as u32,
            "rpm" => frame.rpm = v,
            "speedX" => frame.speed_x = v,
            "speedY" => frame.speed_y = v,
            "speedZ" => frame.speed_z = v,
            "track" => frame.track.copy_from_slice(&values[..TRACK_BEAMS]),
            "trackPos" => frame.track_pos = v,
            "wheelSpinVel" => frame.wheel_spin_vel.copy_from_slice(&values),
            "z" => frame.z = v,
            _ => unreachable!("arity table and match agree"),
        }
    }
    if let Some((missing, _)) = SENSOR_FIELDS.iter().find(|(n, _)| !seen.contains(n)) {
        return Err(ProtocolError::Parse(format!("missing field {missing}")));
    }
    if let Some(msg) = frame.range_violation() {
        let field = msg.split(' ').next().unwrap_or_default().to_string();
        return Err(ProtocolError::Range {
            field,
            value: msg,
            bound: "sensor range".into(),
        });
    }
    Ok(frame)
}

/// The `(error <reason>)` reply; parentheses in the reason are replaced so
/// the reply stays a single well-formed group.
pub fn error_line(reason: &str) -> String {
    let clean: String = reason
        .chars()
        .map(|c| match c {
            '(' => '[',
            ')' => ']',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect();
    format!("(error {clean})\n")
}

/// Extracts the reason from an error reply, if the line is one.
pub fn parse_error_line(line: &str) -> Option<&str> {
    line.trim_end()
        .strip_prefix("(error ")
        .and_then(|r| r.strip_suffix(')'))
}

const MAX_DATAGRAM: usize = 65_507;

/// Counters returned when the serve loop stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: u64,
    pub errors: u64,
    pub resets: u64,
}

/// One simulator served over UDP, one reply per datagram.
pub struct Server {
    socket: UdpSocket,
    sim: Simulator,
    seed: u64,
    idle_timeout: Option<Duration>,
    max_requests: Option<u64>,
}

impl Server {
    /// Binds the endpoint. `idle_timeout = None` serves forever.
    pub fn bind(
        addr: impl ToSocketAddrs + std::fmt::Debug,
        sim: Simulator,
        seed: u64,
        idle_timeout: Option<Duration>,
    ) -> Result<Self> {
        let label = format!("{addr:?}");
        let socket = UdpSocket::bind(addr).map_err(|source| ProtocolError::BindFailure {
            addr: label,
            source,
        })?;
        socket.set_read_timeout(idle_timeout)?;
        Ok(Self {
            socket,
            sim,
            seed,
            idle_timeout,
            max_requests: None,
        })
    }

    /// Stop after this many datagrams.
    pub fn with_max_requests(mut self, n: u64) -> Self {
        self.max_requests = Some(n);
        self
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Reply for one request line; never fails.
    pub fn handle(&mut self, line: &str, stats: &mut ServeStats) -> String {
        stats.requests += 1;
        let cmd = match parse_effectors(line) {
            Ok(c) => c,
            Err(e) => {
                stats.errors += 1;
                return error_line(&e.to_string());
            }
        };
        if cmd.meta() == 1 {
            stats.resets += 1;
            return encode_sensors(self.sim.reset(self.seed));
        }
        match self.sim.step(&cmd) {
            Ok(out) => encode_sensors(&out.frame),
            Err(e) => {
                stats.errors += 1;
                error_line(&e.to_string())
            }
        }
    }

    /// Runs until the idle timeout elapses without a request, or the request
    /// limit is reached.
    pub fn run(&mut self) -> Result<ServeStats> {
        let mut stats = ServeStats::default();
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            if self.max_requests.is_some_and(|m| stats.requests >= m) {
                return Ok(stats);
            }
            let (n, peer) = match self.socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e)
                    if self.idle_timeout.is_some()
                        && matches!(
                            e.kind(),
                            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                        ) =>
                {
                    return Ok(stats)
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                // e.g. ICMP port unreachable from a departed client on some platforms
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => continue,
                Err(e) => return Err(e.into()),
            };
            let reply = match std::str::from_utf8(&buf[..n]) {
                Ok(line) => self.handle(line, &mut stats),
                Err(_) => {
                    stats.requests += 1;
                    stats.errors += 1;
                    error_line("request is not valid UTF-8")
                }
            };
            // a vanished client must not stop the loop
            let _ = self.socket.send_to(reply.as_bytes(), peer);
        }
    }
}

/// Blocking client for [`Server`].
pub struct Client {
    socket: UdpSocket,
}

impl Client {
    pub fn connect(server: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        socket.connect(server)?;
        socket.set_read_timeout(Some(timeout))?;
        Ok(Self { socket })
    }

    /// Sends a raw line and returns the raw reply.
    pub fn request_raw(&self, line: &[u8]) -> Result<String> {
        self.socket.send(line)?;
        let mut buf = vec![0u8; MAX_DATAGRAM];
        let n = self.socket.recv(&mut buf)?;
        String::from_utf8(buf[..n].to_vec())
            .map_err(|_| ProtocolError::Parse("reply is not valid UTF-8".into()))
    }

    /// Sends a command and parses the sensor reply.
    pub fn request(&self, cmd: &EffectorCommand) -> Result<SensorFrame> {
        let reply = self.request_raw(encode_effectors(cmd).as_bytes())?;
        if let Some(reason) = parse_error_line(&reply) {
            return Err(ProtocolError::Parse(format!("server error: {reason}")));
        }
        parse_sensors(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_line_starts_with_angle() {
        let frame = SensorFrame {
            angle: 0.1,
            ..SensorFrame::default()
        };
        let line = encode_sensors(&frame);
        assert!(line.starts_with("(angle 0.1)(curLapTime 0)"));
        assert!(line.ends_with("(z 0)\n"));
        assert!(!line.contains(") ("));
        let track = line.split("(track ").nth(1).unwrap();
        let track = &track[..track.find(')').unwrap()];
        assert_eq!(track.split(' ').count(), 19);
        assert_eq!(parse_sensors(&line).unwrap(), frame);
    }

    #[test]
    fn effector_defaults_and_values() {
        let cmd = parse_effectors("(accel 1)(brake 0)(steering -0.5)").unwrap();
        assert_eq!(cmd.accel(), 1.0);
        assert_eq!(cmd.brake(), 0.0);
        assert_eq!(cmd.steering(), -0.5);
        assert_eq!(cmd.gear(), 1);
        assert_eq!(cmd.meta(), 0);
        assert_eq!(parse_effectors("").unwrap(), EffectorCommand::default());
        assert_eq!(parse_effectors("\n").unwrap(), EffectorCommand::default());
    }

    #[test]
    fn effector_errors() {
        assert!(matches!(
            parse_effectors("(accel 2)"),
            Err(ProtocolError::Range { .. })
        ));
        assert!(matches!(
            parse_effectors("(gear 7)"),
            Err(ProtocolError::Range { .. })
        ));
        assert!(matches!(
            parse_effectors("(gear 1.5)"),
            Err(ProtocolError::Range { .. })
        ));
        assert!(matches!(
            parse_effectors("(meta 2)"),
            Err(ProtocolError::Range { .. })
        ));
        assert!(matches!(
            parse_effectors("(nitro 1)"),
            Err(ProtocolError::UnknownField(_))
        ));
        for bad in [
            "(accel",
            "accel 1",
            "(accel)",
            "(accel 1 2)",
            "(accel x)",
            "(accel inf)",
            "(accel NaN)",
            "(accel 1)(accel 1)",
            "((accel 1))",
            "(accel 1))",
            "()",
        ] {
            assert!(
                matches!(parse_effectors(bad), Err(ProtocolError::Parse(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn effector_roundtrip() {
        let cmd = EffectorCommand::new(0.25, 0.125, 1.0, -1, -0.3, 45.5, 1).unwrap();
        assert_eq!(parse_effectors(&encode_effectors(&cmd)).unwrap(), cmd);
    }

    #[test]
    fn error_reply_is_one_group() {
        let line = error_line("unbalanced ( here)");
        assert_eq!(line, "(error unbalanced [ here])\n");
        assert_eq!(parse_error_line(&line), Some("unbalanced [ here]"));
    }
}
