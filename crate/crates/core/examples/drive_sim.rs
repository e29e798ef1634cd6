// Drives the built-in oval with a hand-written lane keeper and writes the
// sensor/command trace as CSV. Pass a path to choose the output file.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use opgd::agents::shift_gear;
use opgd::sim::trace::TraceWriter;
use opgd::sim::{EffectorCommand, SensorFrame, SimConfig, Simulator, Track};

fn lane_keeper(frame: &SensorFrame) -> EffectorCommand {
    let steering = (frame.angle * 2.0 - frame.track_pos * 0.6).clamp(-1.0, 1.0);
    let (accel, brake) = if frame.speed_x < 90.0 {
        (0.6, 0.0)
    } else {
        (0.0, 0.1)
    };
    EffectorCommand::drive(steering, accel, brake, shift_gear(frame)).expect("values in range")
}

fn drive(path: &PathBuf, ticks: usize) -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulator::new(Track::default_oval(), SimConfig::default(), 0)?;
    let mut trace = TraceWriter::new(BufWriter::new(File::create(path)?))?;
    let mut total = 0.0;
    for tick in 0..ticks {
        let frame = sim.frame().clone();
        let cmd = lane_keeper(&frame);
        trace.record(&frame, &cmd)?;
        let out = sim.step(&cmd)?;
        total += out.reward;
        if let Some(t) = out.termination {
            return Err(format!("episode ended at tick {tick}: {}", t.as_str()).into());
        }
    }
    trace.finish()?;
    let f = sim.frame();
    println!(
        "{ticks} ticks: distance {:.1} m, speed {:.1} km/h, last lap {:.2} s, reward {total:.1}",
        f.dist_raced, f.speed_x, f.last_lap_time
    );
    println!("trace written to {}", path.display());
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    drive(&std::env::temp_dir().join("opgd_drive_trace.csv"), 3000)
}

fn main() {
    let result = match std::env::args().nth(1) {
        Some(path) => drive(&PathBuf::from(path), 3000),
        None => run_example(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
