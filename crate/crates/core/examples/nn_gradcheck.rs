// Backpropagation of a small tanh network checked against central
// differences, with a sign-flipped gradient as a negative control.

use opgd::nn::{grad_check, grad_check_with, DenseNet, Head};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let net = DenseNet::seeded(
        &[5, 16, 16, 3],
        &[Head::Tanh, Head::UnitInterval, Head::UnitInterval],
        3,
    )?;
    let report = grad_check(&net, 10, 1);
    println!(
        "{} parameters, max relative error {:.2e}, passed {}",
        net.num_params(),
        report.max_error(),
        report.passed()
    );

    let control = grad_check_with(&net, 10, 1, |net, x, up| {
        let (mut p, i) = net
            .backward_with(net.params().values(), x, up)
            .expect("shapes match");
        p[0] = -p[0];
        (p, i)
    });
    println!(
        "sign-flip control: max relative error {:.2e}, passed {}",
        control.max_error(),
        control.passed()
    );
    if !report.passed() || control.passed() {
        return Err("gradient check did not separate the true and corrupted gradients".into());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
