//! Chunk-wise optimal-transport pairing of a data batch with noise draws.

use dualbridge::coupling::{ot_pair, CouplingConfig};
use dualbridge::{rng, LatentClip};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dualbridge::Result<()> {
    let (c, t, b) = (8, 16, 12);
    let mut r = rng::stream(3, "example/coupling");
    let mut draw = |shift: f64| {
        let data = (0..c * t).map(|_| shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect();
        LatentClip::new(c, t, data).expect("shape")
    };
    let data: Vec<LatentClip> = (0..b).map(|i| draw(if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
    let noise: Vec<LatentClip> = (0..b).map(|_| draw(0.0)).collect();
    let refs: Vec<&LatentClip> = data.iter().collect();
    let identity: f64 = data.iter().zip(&noise).map(|(x, e)| x.distance(e).powi(2)).sum();
    println!("unpaired cost {identity:.1}");
    for (tc, cc) in [(0, 0), (0, 4), (4, 0), (4, 4), (2, 2)] {
        let table = ot_pair(&refs, &noise, &CouplingConfig::chunked(tc, cc))?;
        let paired = table.apply(&noise)?;
        let cost: f64 = data.iter().zip(&paired).map(|(x, e)| x.distance(e).powi(2)).sum();
        println!(
            "chunks ({tc},{cc}): {:>3} positions  assignment cost {:.1}  recomputed {:.1}",
            table.positions.len(),
            table.total_cost(),
            cost
        );
    }
    Ok(())
}
