use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opgd::mdp::{differential_values, exact_policy_gradient, SoftmaxPolicy, TabularMdp};
use opgd::policy_opt::{
    opgd_step, orthogonality_residual, surrogate_loss, weighted_residual, InteractionBuffer,
    ParamVector, TabularCritic, TabularSoftmax, Transition,
};

type Rec = Transition<usize, usize>;

struct Tabular {
    policy: TabularSoftmax,
    critic: TabularCritic,
    theta_a: ParamVector,
    theta_q: ParamVector,
    records: Vec<Rec>,
}

fn tabular(seed: u64, records: usize) -> Tabular {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.random_range(1..=5);
    let na = rng.random_range(2..=4);
    let mut draw =
        |n| ParamVector::flat((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let theta_a = draw(ns * na);
    let theta_q = draw(ns * na);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let records = (0..records)
        .map(|_| Transition {
            state: rng.random_range(0..ns),
            action: rng.random_range(0..na),
            reward: 0.0,
            next_state: rng.random_range(0..ns),
            terminal: false,
        })
        .collect();
    Tabular {
        policy: TabularSoftmax {
            n_states: ns,
            n_actions: na,
        },
        critic: TabularCritic {
            n_states: ns,
            n_actions: na,
        },
        theta_a,
        theta_q,
        records,
    }
}

fn loss(t: &Tabular, a: &ParamVector, q: &ParamVector) -> f64 {
    surrogate_loss(
        orthogonality_residual(&t.policy, a, &t.critic, q, &t.records)
            .unwrap()
            .values(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // with weights d(s) over every (s, a) and the exact differential Q, the
    // residual is the exact policy gradient
    #[test]
    fn exact_weighting_recovers_the_policy_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = rng.random_range(1..=6);
        let na = rng.random_range(1..=4);
        let mdp = TabularMdp::random(ns, na, &mut rng);
        let policy = SoftmaxPolicy::random(ns, na, 1.0, &mut rng);
        let sol = differential_values(&mdp, &policy).unwrap();
        let flat = |m: &nalgebra::DMatrix<f64>| (0..ns * na).map(|k| m[(k / na, k % na)]).collect::<Vec<_>>();
        let pairs: Vec<(usize, usize)> = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).collect();
        let g = weighted_residual(
            &TabularSoftmax { n_states: ns, n_actions: na },
            &ParamVector::flat(flat(policy.theta())).unwrap(),
            &TabularCritic { n_states: ns, n_actions: na },
            &ParamVector::flat(flat(&sol.q_diff)).unwrap(),
            pairs.iter().map(|(s, a)| (s, a, sol.d[*s])),
        ).unwrap();
        let exact = flat(&exact_policy_gradient(&mdp, &policy).unwrap());
        for (x, y) in g.values().iter().zip(&exact) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn residual_is_linear_in_the_critic(seed in any::<u64>(), c in -5.0..5.0f64) {
        let t = tabular(seed, 40);
        let scaled = t.theta_q.with_values(t.theta_q.values().iter().map(|v| c * v).collect()).unwrap();
        let g = orthogonality_residual(&t.policy, &t.theta_a, &t.critic, &t.theta_q, &t.records).unwrap();
        let gs = orthogonality_residual(&t.policy, &t.theta_a, &t.critic, &scaled, &t.records).unwrap();
        for (x, y) in g.values().iter().zip(gs.values()) {
            prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    // the critic step is the exact gradient of the surrogate loss; the actor
    // step follows the dQ/da chain instead and is not checked here
    #[test]
    fn critic_step_matches_finite_differences(seed in any::<u64>()) {
        let t = tabular(seed, 30);
        let eta = 1e-3;
        let step = opgd_step(&t.policy, &t.critic, &t.theta_a, &t.theta_q, &t.records, eta).unwrap();
        prop_assert!((step.loss - loss(&t, &t.theta_a, &t.theta_q)).abs() <= 1e-12 * (1.0 + step.loss));
        let h = 1e-6;
        for k in 0..t.theta_q.len() {
            let bump = |d: f64| {
                let mut v = t.theta_q.values().to_vec();
                v[k] += d;
                t.theta_q.with_values(v).unwrap()
            };
            let fd = (loss(&t, &t.theta_a, &bump(h)) - loss(&t, &t.theta_a, &bump(-h))) / (2.0 * h);
            let analytic = (t.theta_q.values()[k] - step.theta_q.values()[k]) / eta;
            prop_assert!((fd - analytic).abs() <= 1e-5 * (1.0 + fd.abs()), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn small_critic_steps_never_increase_the_loss(seed in any::<u64>()) {
        let t = tabular(seed, 64);
        let step = opgd_step(&t.policy, &t.critic, &t.theta_a, &t.theta_q, &t.records, 1e-6).unwrap();
        prop_assert!(loss(&t, &t.theta_a, &step.theta_q) <= step.loss + 1e-12);
    }

    #[test]
    fn buffer_keeps_the_newest_records(capacity in 1usize..50, inserts in 0usize..200) {
        let mut buf = InteractionBuffer::new(capacity);
        for i in 0..inserts {
            buf.push(i);
        }
        prop_assert_eq!(buf.len(), inserts.min(capacity));
        let kept: Vec<usize> = buf.iter().copied().collect();
        let expected: Vec<usize> = (inserts.saturating_sub(capacity)..inserts).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn samples_are_distinct_stored_records(seed in any::<u64>(), len in 1usize..100, batch in 1usize..40) {
        let mut buf = InteractionBuffer::new(100);
        for i in 0..len {
            buf.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut got: Vec<usize> = buf.sample(batch, &mut rng).into_iter().copied().collect();
        prop_assert_eq!(got.len(), batch.min(len));
        got.sort();
        got.dedup();
        prop_assert_eq!(got.len(), batch.min(len));
        prop_assert!(got.iter().all(|i| *i < len));
    }
}

#[test]
fn zero_critic_is_a_fixed_point() {
    let t = tabular(1, 20);
    let zero = t.theta_q.with_values(vec![0.0; t.theta_q.len()]).unwrap();
    let step = opgd_step(&t.policy, &t.critic, &t.theta_a, &zero, &t.records, 1e-3).unwrap();
    assert_eq!(step.loss, 0.0);
    assert_eq!(step.theta_a.values(), t.theta_a.values());
    assert_eq!(step.theta_q.values(), zero.values());
}
