// A short OPGD / DDPG / random comparison on the oval. The full experiment
// is `opgd run --config configs/contrast.toml`.

use opgd::harness::{self, AgentKind, AgentSpec, ExperimentConfig, FINAL_WINDOW};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig {
        agent: AgentSpec::Many(vec![AgentKind::Opgd, AgentKind::Ddpg, AgentKind::Random]),
        episodes: 10,
        max_ticks: 150,
        seeds: vec![0, 1],
        out: std::env::temp_dir().join("opgd_train_agents"),
        ..ExperimentConfig::default()
    };
    let report = harness::run(&config)?;
    for row in &report.contrast {
        println!(
            "{:>6}: mean of the last {} episodes {:.2}",
            row.kind.as_str(),
            FINAL_WINDOW.min(config.episodes),
            row.final_window_mean
        );
    }
    println!(
        "{} files under {}",
        report.files.len(),
        config.out.display()
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
