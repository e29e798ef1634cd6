//! Rollout traces as CSV.
//!
//! One row per tick. Columns are every sensor in wire order (vector sensors
//! expand to `track_0 .. track_18` and so on), then the effectors that were
//! applied on that tick as `cmd_accel, cmd_brake, cmd_clutch, cmd_gear,
//! cmd_steering, cmd_focus, cmd_meta`.

use std::io::Write;

use super::car::EffectorCommand;
use super::sensors::{SensorFrame, SENSOR_FIELDS};
use super::SimError;

pub const EFFECTOR_COLUMNS: [&str; 7] = [
    "cmd_accel",
    "cmd_brake",
    "cmd_clutch",
    "cmd_gear",
    "cmd_steering",
    "cmd_focus",
    "cmd_meta",
];

/// The fixed trace header.
pub fn header() -> Vec<String> {
    let mut cols = Vec::new();
    for (name, n) in SENSOR_FIELDS {
        if n == 1 {
            cols.push(name.to_string());
        } else {
            cols.extend((0..n).map(|i| format!("{name}_{i}")));
        }
    }
    cols.extend(EFFECTOR_COLUMNS.iter().map(|c| c.to_string()));
    cols
}

pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Result<Self, SimError> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(header())?;
        Ok(Self { out })
    }

    /// Appends the frame observed on a tick and the command applied on it.
    pub fn record(&mut self, frame: &SensorFrame, cmd: &EffectorCommand) -> Result<(), SimError> {
        let mut row: Vec<String> = frame
            .groups()
            .iter()
            .flat_map(|(_, vals)| vals.iter().map(|v| v.to_string()))
            .collect();
        row.extend([
            cmd.accel().to_string(),
            cmd.brake().to_string(),
            cmd.clutch().to_string(),
            cmd.gear().to_string(),
            cmd.steering().to_string(),
            cmd.focus().to_string(),
            cmd.meta().to_string(),
        ]);
        self.out.write_record(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, SimError> {
        self.out.flush()?;
        self.out
            .into_inner()
            .map_err(|e| SimError::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_width_matches_rows() {
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        w.record(&SensorFrame::default(), &EffectorCommand::default())
            .unwrap();
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let width = header().len();
        assert_eq!(
            width,
            1 + 1 + 1 + 1 + 1 + 5 + 1 + 1 + 1 + 36 + 1 + 1 + 3 + 19 + 1 + 4 + 1 + 7
        );
        assert_eq!(lines[1].split(',').count(), width);
        assert!(lines[0].starts_with("angle,curLapTime,"));
        assert!(lines[0].ends_with("cmd_focus,cmd_meta"));
    }
}
