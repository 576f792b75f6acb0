//! Prints the noise grid and the preconditioning coefficients along it.
//!
//! cargo run --example noise_schedule -- [sigma_max] [steps]

use dualbridge::schedule::{loss_weight, precond};
use dualbridge::ScheduleParams;

fn main() -> dualbridge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let sigma_max = args.first().and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let s = ScheduleParams::default().with_sigma_max(sigma_max)?.with_steps(steps)?;
    println!("rho={} sigma_data={} N={}", s.rho, s.sigma_data, s.n_steps);
    println!("{:>4} {:>12} {:>10} {:>10} {:>10} {:>9} {:>12}", "i", "sigma", "c_skip", "c_out", "c_in", "c_noise", "lambda");
    for (i, sigma) in s.grid().into_iter().enumerate() {
        let c = precond(sigma, s.sigma_data)?;
        println!(
            "{i:>4} {sigma:>12.6} {:>10.6} {:>10.6} {:>10.6} {:>9.4} {:>12.4}",
            c.c_skip,
            c.c_out,
            c.c_in,
            c.noise()?,
            loss_weight(sigma, s.sigma_data)?
        );
    }
    Ok(())
}
