//! Bridges two Gaussian mixtures whose denoisers are known in closed form:
//! a few transfers, a cycle, and a grid-size sweep per solver.

use dualbridge::bridge::{cycle, encode, transfer, BridgeConfig};
use dualbridge::experiments::GmmPair;
use dualbridge::pfode::Method;
use dualbridge::{rng, LatentClip, ScheduleParams};

fn main() -> dualbridge::Result<()> {
    let pair = GmmPair::standard();
    let schedule = ScheduleParams::default();
    let cfg = BridgeConfig::new(&pair.source, &pair.target, schedule, schedule.sigma_max, Method::Heun, true)?;
    let mut r = rng::stream(7, "example/points");
    for p in pair.source.sample_n(5, &mut r) {
        let x = LatentClip::from_point(&p)?;
        let z = encode(&x, &cfg)?;
        let y = transfer(&x, &cfg)?;
        let back = cycle(&x, &cfg)?;
        println!(
            "x=({:+.3},{:+.3})  latent=({:+8.2},{:+8.2})  target=({:+.3},{:+.3})  cycle error {:.2e}",
            p[0],
            p[1],
            z.data()[0],
            z.data()[1],
            y.data()[0],
            y.data()[1],
            back.normalized_distance(&x)
        );
    }

    let x = LatentClip::from_point(&[0.3, 2.4])?;
    let reference = transfer(&x, &BridgeConfig::new(&pair.source, &pair.target, schedule.with_steps(4000)?, 100.0, Method::Heun, true)?)?;
    println!("\nendpoint error against N=4000 Heun");
    for m in Method::ALL {
        let errs: Vec<String> = [10, 20, 40, 80]
            .iter()
            .map(|&n| {
                let s = schedule.with_steps(n)?;
                let y = transfer(&x, &BridgeConfig::new(&pair.source, &pair.target, s, 100.0, m, true)?)?;
                Ok(format!("{:.2e}", y.distance(&reference)))
            })
            .collect::<dualbridge::Result<_>>()?;
        println!("  {m:<5} N=10,20,40,80: {}", errs.join("  "));
    }
    Ok(())
}
