// Serves a simulator on a local UDP port and drives it from a client,
// including one malformed request and a restart.

use std::thread;
use std::time::Duration;

use opgd::protocol::{Client, Server};
use opgd::sim::{EffectorCommand, SimConfig, Simulator, Track};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let sim = Simulator::new(Track::default_oval(), SimConfig::default(), 0)?;
    let mut server = Server::bind("127.0.0.1:0", sim, 0, Some(Duration::from_millis(500)))?;
    let addr = server.local_addr()?;
    let worker = thread::spawn(move || server.run());

    let client = Client::connect(addr, Duration::from_secs(2))?;
    let cmd = EffectorCommand::drive(0.0, 1.0, 0.0, 1)?;
    for _ in 0..50 {
        client.request(&cmd)?;
    }
    let frame = client.request(&cmd)?;
    println!(
        "after 51 ticks: speedX {:.2} km/h, distRaced {:.2} m",
        frame.speed_x, frame.dist_raced
    );

    let reply = client.request_raw(b"(accel 2)")?;
    println!("malformed request answered with {reply}");

    let frame = client.request(&EffectorCommand::restart())?;
    println!(
        "after restart: speedX {}, distRaced {}",
        frame.speed_x, frame.dist_raced
    );
    drop(client);

    let stats = worker.join().map_err(|_| "server thread panicked")??;
    println!(
        "server saw {} requests, {} errors, {} resets",
        stats.requests, stats.errors, stats.resets
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
