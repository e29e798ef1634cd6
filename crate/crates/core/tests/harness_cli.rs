use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use opgd::harness::{self, AgentKind, AgentSpec, ExperimentConfig};
use opgd::sim::Track;

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn opgd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opgd"))
}

fn small(agent: AgentSpec, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        agent,
        episodes: 6,
        max_ticks: 80,
        seeds: vec![1, 2],
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn shipped_track_is_the_builtin_oval() {
    let text = fs::read_to_string(manifest("tracks/oval.trk")).unwrap();
    assert_eq!(
        text.parse::<Track>().unwrap().to_string(),
        Track::default_oval().to_string()
    );
}

#[test]
fn shipped_configs_load_and_resolve_the_track() {
    let contrast = ExperimentConfig::load(manifest("configs/contrast.toml")).unwrap();
    assert_eq!(
        contrast.agent.kinds(),
        vec![AgentKind::Opgd, AgentKind::Ddpg, AgentKind::Random]
    );
    assert_eq!(
        contrast.load_track().unwrap().to_string(),
        Track::default_oval().to_string()
    );
    let quick = ExperimentConfig::load(manifest("configs/quick.toml")).unwrap();
    assert_eq!(quick.seeds, vec![0, 1]);
    assert_eq!(quick.episodes, 20);
}

#[test]
fn random_run_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let report = harness::run(&small(AgentSpec::One(AgentKind::Random), dir.path())).unwrap();
    for seed in [1, 2] {
        let text = fs::read_to_string(dir.path().join(format!("random/seed_{seed}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("episode,total_reward,mean_loss,ticks,termination")
        );
        assert_eq!(lines.count(), 6);
    }
    let summary = fs::read_to_string(dir.path().join("random/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(!dir.path().join("contrast.csv").exists());
    assert_eq!(report.runs[0].rows.len(), 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let spec = AgentSpec::Many(vec![AgentKind::Opgd, AgentKind::Ddpg, AgentKind::Random]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = harness::run(&small(spec.clone(), a.path())).unwrap();
    harness::run(&small(spec, b.path())).unwrap();
    assert_eq!(ra.files.len(), 3 * 3 + 1);
    for file in &ra.files {
        let rel = file.strip_prefix(a.path()).unwrap();
        assert_eq!(
            fs::read(file).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel:?}"
        );
    }
}

#[test]
fn run_applies_seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(
        &config,
        "agent = \"random\"\nepisodes = 3\nmax_ticks = 40\nseeds = [0, 1]\nout = \"unused\"\n",
    )
    .unwrap();
    let out = dir.path().join("res");
    let status = opgd()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "7", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let written: Vec<_> = fs::read_dir(out.join("random"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    let mut written = written;
    written.sort();
    assert_eq!(written, ["seed_7.csv", "summary.csv"]);
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "episodes = -3\n").unwrap();
    let out = opgd()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = opgd()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.toml"))
        .output()
        .unwrap();
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn unknown_suite_exits_with_usage_code() {
    let out = opgd()
        .args(["verify", "--suite", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn all_suites_pass_and_the_negative_control_fails() {
    let ok = opgd().args(["verify", "--suite", "all"]).output().unwrap();
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = opgd()
        .args(["verify", "--suite", "gradcheck", "--negative-control"])
        .output()
        .unwrap();
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn serve_rejects_a_missing_track() {
    let out = opgd()
        .args(["serve", "--track", "/nonexistent/track.trk", "--port", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
