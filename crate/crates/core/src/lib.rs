//! Orthogonal policy gradient descent (OPGD) laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: exact tabular machinery for average-reward MDPs, including the
//!   policy-gradient identity and a finite-difference oracle for it.
//! * [`policy_opt`]: the orthogonality residual `g = sum grad pi(a|s) Q(s,a)`,
//!   the surrogate loss `0.5 |g|^2` and the OPGD parameter step.
//! * [`nn`]: small dense networks with exact reverse-mode gradients.
//! * [`sim`]: a deterministic 2D racing simulator with TORCS-style sensors
//!   and effectors.
//! * [`protocol`]: the line-based wire codec and a UDP server loop.
//! * [`agents`]: the OPGD agent and the DDPG-style actor-critic baseline.
//! * [`harness`]: experiment configuration, runs, CSV output and the
//!   verification suites.
//!
//! Runnable walkthroughs for each layer live in `examples/`.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod agents;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod policy_opt;
pub mod protocol;
pub mod sim;
