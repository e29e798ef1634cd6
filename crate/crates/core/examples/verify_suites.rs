// Runs every verification suite, then the negative control that must make
// the gradient suites fail.

use opgd::harness::{verify, Suite, VerifyOptions};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let reports = verify(&Suite::ALL, VerifyOptions::default());
    for r in &reports {
        println!("{r}");
    }
    if !reports.iter().all(|r| r.ok()) {
        return Err("a verification suite failed".into());
    }

    let control = verify(
        &[Suite::Theorem, Suite::GradCheck],
        VerifyOptions {
            negative_control: true,
            seed: 0,
        },
    );
    for r in &control {
        println!("negative control: {}/{} checks passed", r.passed, r.total);
    }
    if control.iter().any(|r| r.ok()) {
        return Err("the negative control was not detected".into());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
