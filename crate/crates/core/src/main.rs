use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use opgd::harness::{self, ExperimentConfig, Suite, VerifyOptions};
use opgd::protocol::Server;
use opgd::sim::{SimConfig, Simulator, Track};

#[derive(Parser)]
#[command(
    name = "opgd",
    version,
    about = "Orthogonal policy gradient descent experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites: theorem, gradcheck, sim, protocol or all.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the analytic gradients; the gradient suites must fail.
        #[arg(long)]
        negative_control: bool,
    },
    /// Serve a simulator over UDP.
    Serve {
        /// Track file; the built-in oval when omitted.
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, default_value_t = 3001)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this many seconds without a request (0 = never).
        #[arg(long, default_value_t = 0)]
        idle_timeout: u64,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::Verify {
            suite,
            seed,
            negative_control,
        } => verify(&suite, seed, negative_control),
        Command::Serve {
            track,
            port,
            host,
            seed,
            idle_timeout,
        } => serve(track, &host, port, seed, idle_timeout),
    }
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(&e.to_string(), e.exit_code()),
    };
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = out {
        cfg.out = out;
    }
    match harness::run(&cfg) {
        Ok(report) => {
            for row in &report.contrast {
                println!(
                    "{}: final-{} mean {:.3}, final-quartile mean {:.3} variance {:.3}",
                    row.kind,
                    harness::FINAL_WINDOW,
                    row.final_window_mean,
                    row.final_quartile_mean,
                    row.final_quartile_variance
                );
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e.to_string(), e.exit_code()),
    }
}

fn verify(suite: &str, seed: u64, negative_control: bool) -> ExitCode {
    let Some(suites) = Suite::parse_list(suite) else {
        return fail(
            &format!("unknown suite {suite:?}; expected theorem, gradcheck, sim, protocol or all"),
            2,
        );
    };
    let reports = harness::verify(
        &suites,
        VerifyOptions {
            negative_control,
            seed,
        },
    );
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.ok()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn serve(track: Option<PathBuf>, host: &str, port: u16, seed: u64, idle: u64) -> ExitCode {
    let track = match track {
        None => Track::default_oval(),
        Some(path) => match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| t.parse::<Track>().map_err(|e| e.to_string()))
        {
            Ok(t) => t,
            Err(e) => return fail(&format!("{}: {e}", path.display()), 2),
        },
    };
    let sim = match Simulator::new(track, SimConfig::default(), seed) {
        Ok(s) => s,
        Err(e) => return fail(&e.to_string(), 2),
    };
    let timeout = (idle > 0).then(|| Duration::from_secs(idle));
    let mut server = match Server::bind((host, port), sim, seed, timeout) {
        Ok(s) => s,
        Err(e) => return fail(&e.to_string(), 1),
    };
    if let Ok(addr) = server.local_addr() {
        eprintln!("serving on {addr}");
    }
    match server.run() {
        Ok(stats) => {
            eprintln!(
                "idle, stopping after {} requests ({} errors, {} resets)",
                stats.requests, stats.errors, stats.resets
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e.to_string(), 1),
    }
}

fn fail(msg: &str, code: i32) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}
