//! The testbed ablations: noise-level settings, inference pitch shift, shared
//! latents and cycle error, written to an output directory.
//!
//! cargo run --release --example testbed_studies -- [out_dir]
//!
//! Scaled down by default; `FULL=1` runs the desk-scale configuration
//! (roughly 45 minutes of training).

use std::path::PathBuf;

use dualbridge::experiments::{
    cycle_study, pitch_shift_study, shared_latent_study, sigma_ablation, CycleConfig, ModelKey, SharedLatentConfig, StudyOutput,
    Testbed, TestbedConfig,
};
use dualbridge::synth::Split;

fn main() -> dualbridge::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "testbed-studies".into()));
    let full = std::env::var_os("FULL").is_some();
    let config = if full {
        TestbedConfig::default()
    } else {
        let mut c = TestbedConfig::default();
        c.corpus.clips_per_instrument = 120;
        c.training.steps = 400;
        c.eval_clips = 12;
        c
    };
    let mut tb = Testbed::build(config)?;
    for (inst, smax) in [("flute", 100.0), ("violin", 100.0), ("bassoon", 100.0), ("flute", 5.0), ("violin", 5.0)] {
        tb.ensure_model(&ModelKey::new(inst, smax))?;
    }

    let sigma = sigma_ablation(&tb, "flute", "violin", &[(100.0, 100.0), (100.0, 50.0), (100.0, 20.0), (100.0, 5.0), (5.0, 5.0)])?;
    print!("{}", sigma.summary());
    sigma.write_to(&out.join("sigma"))?;

    let shift = pitch_shift_study(&tb, "flute", "bassoon", &[0, -12, -24], 100.0)?;
    print!("{}", shift.summary());
    shift.write_to(&out.join("shift"))?;

    let a = &tb.model(&ModelKey::new("flute", 100.0))?.model;
    let b = &tb.model(&ModelKey::new("violin", 100.0))?.model;
    let threshold = tb.similarity_threshold("flute", "violin")?;
    let trials = if full { 100 } else { 12 };
    let shared = shared_latent_study(a, b, &tb.extractor, threshold, &SharedLatentConfig { n_trials: trials, ..Default::default() })?;
    print!("{}", shared.summary());
    shared.write_to(&out.join("shared"))?;

    let n_clips = if full { 100 } else { 8 };
    let clips = tb
        .corpus
        .select("flute", Split::Test)
        .into_iter()
        .take(n_clips)
        .map(|c| a.stats.normalize(c))
        .collect::<dualbridge::Result<Vec<_>>>()?;
    let curve = cycle_study(a, b, &clips, &CycleConfig { schedule: a.schedule, ..Default::default() })?;
    print!("{}", curve.summary());
    curve.write_to(&out.join("cycle"))?;
    Ok(())
}
