// Orthogonal policy gradient descent on a frozen buffer with a tabular
// softmax actor and a lookup-table critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opgd::policy_opt::{
    opgd_step, InteractionBuffer, ParamVector, TabularCritic, TabularSoftmax, Transition,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (ns, na) = (4, 3);
    let policy = TabularSoftmax {
        n_states: ns,
        n_actions: na,
    };
    let critic = TabularCritic {
        n_states: ns,
        n_actions: na,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut buffer = InteractionBuffer::new(128);
    for _ in 0..128 {
        buffer.push(Transition {
            state: rng.random_range(0..ns),
            action: rng.random_range(0..na),
            reward: rng.random_range(-1.0..1.0),
            next_state: rng.random_range(0..ns),
            terminal: false,
        });
    }
    let records: Vec<_> = buffer.iter().cloned().collect();

    let mut theta_a =
        ParamVector::flat((0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut theta_q =
        ParamVector::flat((0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut first = None;
    let mut last = 0.0;
    for iter in 0..200 {
        let step = opgd_step(&policy, &critic, &theta_a, &theta_q, &records, 1e-3)?;
        if iter % 40 == 0 {
            println!("iteration {iter:>3}: surrogate loss {:.6e}", step.loss);
        }
        first.get_or_insert(step.loss);
        last = step.loss;
        theta_a = step.theta_a;
        theta_q = step.theta_q;
    }
    let first = first.unwrap_or(last);
    println!("loss {first:.4e} -> {last:.4e}");
    if last > first {
        return Err("surrogate loss increased".into());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
