//! Trains a small denoiser on one instrument and reports its loss and
//! denoising error at a few noise levels.
//!
//! cargo run --release --example train_denoiser -- [steps] [checkpoint]

use dualbridge::denoiser::{train, Denoiser, TrainingConfig};
use dualbridge::io;
use dualbridge::synth::{generate_corpus, CorpusSpec, Split};
use dualbridge::{rng, ScheduleParams};
use rand_distr::{Distribution, StandardNormal};

fn main() -> dualbridge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let corpus = generate_corpus(&CorpusSpec {
        instruments: vec!["violin".into()],
        clips_per_instrument: 64,
        ..CorpusSpec::default()
    })?;
    let data = corpus.normalized("violin", Split::Train)?;
    let config = TrainingConfig {
        steps,
        lr: 1e-3,
        ..TrainingConfig::default()
    };
    let (model, report) = train(&data, &corpus.stats, ScheduleParams::default(), &config)?;
    let curve = &report.loss_curve;
    let stride = (curve.len() / 6).max(1);
    let shown: Vec<String> = curve.iter().step_by(stride).map(|l| format!("{l:.3}")).collect();
    println!("loss: {}  final {:.4}  ({:.1}s, {:.1} epochs)", shown.join(" "), report.final_loss, report.wall_seconds, report.epochs);

    let test = corpus.normalized("violin", Split::Test)?;
    let mut r = rng::stream(1, "example/noise");
    for sigma in [0.1, 0.5, 1.0, 5.0] {
        let mut err = 0.0;
        for x in &test {
            let noisy = x.map_data(x.data().iter().map(|v| v + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect());
            err += model.denoise(&noisy, sigma)?.distance(x) / x.norm();
        }
        println!("sigma {sigma:>4}: relative denoising error {:.3}", err / test.len() as f64);
    }
    if let Some(path) = args.get(1) {
        io::save_denoiser(path.as_ref(), &model)?;
        println!("saved {path}");
    }
    Ok(())
}
