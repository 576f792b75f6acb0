//! Solver orders and distributional error of the analytic bridge.
//!
//! The default run is scaled down; `FULL=1` uses 20000 samples and a Heun
//! N=5120 reference.

use dualbridge::experiments::{convergence_study, ConvergenceConfig, GmmPair, StudyOutput};

fn main() -> dualbridge::Result<()> {
    let full = std::env::var_os("FULL").is_some();
    let config = if full {
        ConvergenceConfig::default()
    } else {
        ConvergenceConfig {
            n_samples: 2000,
            l2_samples: 50,
            reference_draws: 20_000,
            bins: 32,
            ..ConvergenceConfig::default()
        }
    };
    let report = convergence_study(&GmmPair::standard(), &config)?;
    print!("{}", report.summary());
    if let Some(dir) = std::env::args().nth(1) {
        for p in report.write_to(dir.as_ref())? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
