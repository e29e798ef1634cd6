use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opgd::agents::{
    action_of, features, run_episode, Agent, BaselineAgent, DdpgConfig, OpgdAgent, OpgdAgentConfig,
    Record, FEATURES,
};
use opgd::harness::random_frame;
use opgd::nn::Head;
use opgd::policy_opt::Transition;
use opgd::sim::{reward, step, EffectorCommand, SensorFrame, SimConfig, Simulator, Track};

const OPTIMUM: f64 = 0.3;

fn bandit_reward(a: f64) -> f64 {
    -(a - OPTIMUM) * (a - OPTIMUM)
}

// one-state bandit with reward -(a - 0.3)^2: the actor should settle at 0.3.
// The critic runs on the faster timescale so the actor follows a fitted Q.
fn bandit_run(seed: u64) -> f64 {
    let config = DdpgConfig {
        actor_lr: 1e-4,
        critic_lr: 1e-2,
        lambda: 0.0,
        reward_scale: 1.0,
        batch: 32,
        capacity: 2000,
        hidden: vec![16],
        ..DdpgConfig::default()
    };
    let mut agent = BaselineAgent::with_dims(config, seed, 1, &[Head::UnitInterval]).unwrap();
    let state = vec![1.0];
    let mut updates = 0;
    while updates < 2000 {
        let a = agent.act_features(&state, true)[0];
        agent.observe_record(Transition {
            state: state.clone(),
            action: vec![a],
            reward: bandit_reward(a),
            next_state: state.clone(),
            terminal: true,
        });
        if agent.buffer().len() >= agent.config().batch {
            agent.update().unwrap();
            updates += 1;
        }
    }
    agent.act_features(&state, false)[0]
}

#[test]
fn baseline_solves_the_quadratic_bandit() {
    let finals: Vec<f64> = (0..5).map(bandit_run).collect();
    let hits = finals
        .iter()
        .filter(|a| (*a - OPTIMUM).abs() <= 0.05)
        .count();
    assert!(hits >= 4, "final actions {finals:?}");
}

#[test]
fn opgd_loss_decreases_on_a_frozen_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let config = OpgdAgentConfig {
        eta: 1e-3,
        batch: 64,
        capacity: 64,
        sigma0: 1.0,
        hidden: vec![4],
        ..OpgdAgentConfig::default()
    };
    let heads = [Head::Tanh, Head::UnitInterval];
    let mut agent = OpgdAgent::with_dims(config, 3, 3, &heads).unwrap();
    for _ in 0..64 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        agent.observe_record(Transition {
            state: s.clone(),
            action: vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)],
            reward: 0.0,
            next_state: s,
            terminal: false,
        });
    }
    let losses: Vec<f64> = (0..101).map(|_| agent.update().unwrap()).collect();
    for (i, w) in losses.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "update {i}: {} -> {}", w[0], w[1]);
    }
    assert!(losses[100] < losses[0]);
}

#[test]
fn commands_stay_in_range_for_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut opgd = OpgdAgent::new(
        OpgdAgentConfig {
            sigma0: 2.0,
            ..OpgdAgentConfig::default()
        },
        1,
    )
    .unwrap();
    let mut ddpg = BaselineAgent::new(
        DdpgConfig {
            sigma0: 2.0,
            ..DdpgConfig::default()
        },
        1,
    )
    .unwrap();
    for i in 0..10_000 {
        let frame = random_frame(&mut rng);
        let explore = i % 2 == 0;
        for cmd in [opgd.act(&frame, explore), ddpg.act(&frame, explore)] {
            // the validating constructor rejects anything out of range
            let rebuilt = EffectorCommand::new(
                cmd.accel(),
                cmd.brake(),
                cmd.clutch(),
                cmd.gear(),
                cmd.steering(),
                cmd.focus(),
                cmd.meta(),
            );
            assert_eq!(rebuilt.unwrap(), cmd);
            assert_eq!((cmd.clutch(), cmd.focus(), cmd.meta()), (0.0, 0.0, 0));
            assert!((1..=6).contains(&cmd.gear()));
        }
    }
}

#[test]
fn acting_without_exploration_is_repeatable() {
    let mut agent = OpgdAgent::new(OpgdAgentConfig::default(), 2).unwrap();
    let frame = random_frame(&mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(agent.act(&frame, false), agent.act(&frame, false));
}

#[test]
fn target_parameters_stay_in_the_hull_of_past_live_parameters() {
    let config = DdpgConfig {
        tau: 0.1,
        batch: 8,
        hidden: vec![6],
        ..DdpgConfig::default()
    };
    let mut agent = BaselineAgent::new(config, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..8 {
        let a = random_frame(&mut rng);
        let b = random_frame(&mut rng);
        let cmd = agent.act(&a, true);
        agent.observe(&a, &cmd, rng.random_range(-1.0..1.0), &b, false);
    }
    let live = |ag: &BaselineAgent| {
        let mut v = ag.actor().params().values().to_vec();
        v.extend_from_slice(ag.critic().params().values());
        v
    };
    let target = |ag: &BaselineAgent| {
        let mut v = ag.actor_target().params().values().to_vec();
        v.extend_from_slice(ag.critic_target().params().values());
        v
    };
    let first = live(&agent);
    let (mut lo, mut hi) = (first.clone(), first);
    for _ in 0..200 {
        agent.update().unwrap();
        for (k, v) in live(&agent).into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
        for (k, t) in target(&agent).into_iter().enumerate() {
            assert!(t >= lo[k] - 1e-12 && t <= hi[k] + 1e-12, "parameter {k}");
        }
    }
}

#[test]
fn interleaved_updates_leave_stored_records_intact() {
    let config = DdpgConfig {
        batch: 16,
        capacity: 100,
        hidden: vec![8],
        ..DdpgConfig::default()
    };
    let mut agent = BaselineAgent::new(config, 6).unwrap();
    let mut sim = Simulator::new(Track::default_oval(), SimConfig::default(), 6).unwrap();
    let mut expected: Vec<Record> = Vec::new();
    let mut frame = sim.frame().clone();
    for _ in 0..300 {
        let cmd = agent.act(&frame, true);
        let out = sim.step(&cmd).unwrap();
        agent.observe(&frame, &cmd, out.reward, &out.frame, out.terminal());
        expected.push(Transition {
            state: features(&frame),
            action: action_of(&cmd),
            reward: out.reward,
            next_state: features(&out.frame),
            terminal: out.terminal(),
        });
        agent.maybe_update().unwrap();
        frame = if out.terminal() {
            sim.reset(6).clone()
        } else {
            out.frame
        };
    }
    let stored: Vec<Record> = agent.buffer().iter().cloned().collect();
    assert_eq!(stored.len(), 100);
    assert_eq!(stored.as_slice(), &expected[expected.len() - 100..]);
    assert!(stored
        .iter()
        .all(|r| r.state.len() == FEATURES && r.action.len() == 3));
}

struct Scripted(EffectorCommand);

impl Agent for Scripted {
    fn act(&mut self, _: &SensorFrame, _: bool) -> EffectorCommand {
        self.0
    }
    fn observe(&mut self, _: &SensorFrame, _: &EffectorCommand, _: f64, _: &SensorFrame, _: bool) {}
    fn maybe_update(&mut self) -> opgd::agents::Result<Option<f64>> {
        Ok(None)
    }
}

#[test]
fn scripted_episode_reward_matches_a_replay() {
    let track = Track::straight(2000.0, 6.0).unwrap();
    let config = SimConfig::default();
    let cmd = EffectorCommand::drive(0.0, 0.5, 0.0, 1).unwrap();
    let mut sim = Simulator::new(track.clone(), config.clone(), 0).unwrap();
    let log = run_episode(&mut Scripted(cmd), &mut sim, 400).unwrap();

    let mut state = opgd::sim::reset(&track, &config.car, 0);
    let mut total = 0.0;
    for _ in 0..400 {
        let out = step(&track, &config, &state, &cmd).unwrap();
        total += reward(&state, &out.state, &out.frame, config.damage_penalty);
        state = out.state;
    }
    assert_eq!(log.ticks(), 400);
    assert_eq!(log.total_reward, total);
    assert!(total > 0.0);
}

#[test]
fn episodes_are_reproducible_end_to_end() {
    let run = |opgd: bool| {
        let mut sim = Simulator::new(Track::default_oval(), SimConfig::default(), 8).unwrap();
        let mut agent: Box<dyn Agent> = if opgd {
            Box::new(
                OpgdAgent::new(
                    OpgdAgentConfig {
                        batch: 8,
                        ..OpgdAgentConfig::default()
                    },
                    8,
                )
                .unwrap(),
            )
        } else {
            Box::new(
                BaselineAgent::new(
                    DdpgConfig {
                        batch: 8,
                        ..DdpgConfig::default()
                    },
                    8,
                )
                .unwrap(),
            )
        };
        (0..3)
            .map(|_| {
                sim.reset(8);
                run_episode(agent.as_mut(), &mut sim, 120).unwrap()
            })
            .collect::<Vec<_>>()
    };
    for opgd in [true, false] {
        let a = run(opgd);
        assert!(a.iter().any(|l| !l.losses.is_empty()));
        assert_eq!(a, run(opgd));
    }
}
