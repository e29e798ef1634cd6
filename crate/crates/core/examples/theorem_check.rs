// Exact average-reward policy gradient against central finite differences
// on a few random MDPs, plus the gauge invariance of the differential Q.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opgd::mdp::{
    differential_values, exact_policy_gradient, finite_difference_gradient, policy_gradient_from_q,
    relative_error, SoftmaxPolicy, TabularMdp, DEFAULT_FD_STEP,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (ns, na) in [(2, 2), (4, 3), (6, 4)] {
        let mdp = TabularMdp::random(ns, na, &mut rng);
        let policy = SoftmaxPolicy::random(ns, na, 1.0, &mut rng);
        let exact = exact_policy_gradient(&mdp, &policy)?;
        let fd = finite_difference_gradient(&mdp, &policy, DEFAULT_FD_STEP)?;
        let err = relative_error(&exact, &fd);

        let sol = differential_values(&mdp, &policy)?;
        let shifted = policy_gradient_from_q(&policy, &sol.d, &sol.q_diff.add_scalar(1e3))?;
        let gauge = (&shifted - &exact).abs().max();

        println!(
            "{ns} states x {na} actions: rho {:.6}, relative error {err:.2e}, shift by 1e3 moves the gradient by {gauge:.1e}",
            sol.rho
        );
        if err > 1e-6 || gauge > 1e-10 {
            return Err(format!("gradient mismatch on the {ns}x{na} instance").into());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
