// Exact-gradient ascent on a 3-state, 2-action MDP compared with the best
// deterministic policy found by enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opgd::mdp::{best_deterministic_policy, gradient_ascent, SoftmaxPolicy, TabularMdp};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mdp = TabularMdp::random(3, 2, &mut rng);
    let (choice, best) = best_deterministic_policy(&mdp)?;
    let (policy, trace) = gradient_ascent(&mdp, &SoftmaxPolicy::uniform(3, 2), 50.0, 5000)?;

    for step in [0, 10, 100, 1000, 5000] {
        println!("step {step:>5}: rho {:.6}", trace[step]);
    }
    println!("best deterministic policy {choice:?}: rho {best:.6}");
    let learned: Vec<usize> = (0..3)
        .map(|s| {
            let p = policy.probs_at(s);
            if p[0] >= p[1] {
                0
            } else {
                1
            }
        })
        .collect();
    println!("greedy actions of the learned policy {learned:?}");

    let gap = best - trace[trace.len() - 1];
    if gap > 1e-3 {
        return Err(format!("ascent stopped {gap:.2e} short of the optimum").into());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
