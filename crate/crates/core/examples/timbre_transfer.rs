//! End-to-end timbre transfer on the synthetic testbed: corpus, two
//! denoisers, a bridge at several noise levels, and the evaluation metrics.
//!
//! The default is a scaled-down run of a few minutes; `FULL=1` trains the
//! desk-scale testbed models.

use dualbridge::experiments::{ModelKey, Testbed, TestbedConfig};

fn main() -> dualbridge::Result<()> {
    let config = if std::env::var_os("FULL").is_some() {
        TestbedConfig::default()
    } else {
        let mut c = TestbedConfig::default();
        c.corpus.instruments = vec!["flute".into(), "violin".into()];
        c.corpus.clips_per_instrument = 160;
        c.training.steps = 600;
        c.eval_clips = 20;
        c
    };
    let mut tb = Testbed::build(config)?;
    println!("classifier held-out accuracy {:.3}", tb.classifier_accuracy()?);
    let (flute, violin) = (ModelKey::new("flute", 100.0), ModelKey::new("violin", 100.0));
    for k in [&flute, &violin] {
        let m = tb.ensure_model(k)?;
        if let Some(r) = &m.report {
            println!("{}: loss {:.3} in {:.0}s", k.label(), r.final_loss, r.wall_seconds);
        }
    }
    let a = &tb.model(&flute)?.model;
    let b = &tb.model(&violin)?.model;
    let clips = tb.test_clips("flute")?;
    let unrelated = tb.unrelated_dpd("flute", "violin")?;
    println!("unrelated-pair DPD median {:.3}", dualbridge::metrics::median(&unrelated));
    for top in [100.0, 20.0, 5.0, 1.0] {
        let out = tb.transfer_raw(a, b, top, &clips)?;
        let r = tb.evaluate(&clips, &out, "violin")?.report;
        println!(
            "sigma_top {top:>5}: DPD {:.3}  Jaccard {:.3}  Frechet {:.2}  classified violin {:.2}",
            r.dpd, r.jaccard, r.frechet, r.classifier_accuracy
        );
    }
    Ok(())
}
