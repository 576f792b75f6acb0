//! Pitch-class matrices, DPD, Jaccard and Frechet on rendered clips.

use dualbridge::metrics::{dpd, frechet, jaccard, EmbeddingSet, PitchExtractor};
use dualbridge::synth::{gen_melody, synth, Melody, synth_shifted, FeatureCodec, FeatureCodecSpec, InstrumentSpec};
use dualbridge::LatentClip;

fn main() -> dualbridge::Result<()> {
    let spec = FeatureCodecSpec::default();
    let codec = FeatureCodec::new(spec)?;
    let ex = PitchExtractor::new(spec)?;
    let flute = InstrumentSpec::builtin("flute")?;
    let violin = InstrumentSpec::builtin("violin")?;
    let bassoon = InstrumentSpec::builtin("bassoon")?;
    let a = gen_melody(1, flute.register, 6, (200.0, 200.0))?;
    let b = gen_melody(2, flute.register, 6, (200.0, 200.0))?;
    let render = |m: &Melody, inst: &InstrumentSpec| -> dualbridge::Result<LatentClip> { codec.features(&synth(m, inst, &spec)?) };

    let fa = ex.pitch_class_matrix(&render(&a, &flute)?)?;
    let va = ex.pitch_class_matrix(&render(&a, &violin)?)?;
    let fb = ex.pitch_class_matrix(&render(&b, &flute)?)?;
    let low = ex.pitch_class_matrix(&codec.features(&synth_shifted(&a, -12, &flute, &spec)?)?)?;
    println!("same melody, flute vs violin:       DPD {:.3}  Jaccard {:.3}", dpd(&fa, &va)?, jaccard(&fa, &va, 0.5)?);
    println!("same melody an octave lower:        DPD {:.3}  Jaccard {:.3}", dpd(&fa, &low)?, jaccard(&fa, &low, 0.5)?);
    println!("different melodies, both flute:     DPD {:.3}  Jaccard {:.3}", dpd(&fa, &fb)?, jaccard(&fa, &fb, 0.5)?);

    let set = |inst: &InstrumentSpec, seed0: u64| -> dualbridge::Result<EmbeddingSet> {
        let clips = (0..40)
            .map(|i| render(&gen_melody(seed0 + i, inst.register, 6, (180.0, 220.0))?, inst))
            .collect::<dualbridge::Result<Vec<_>>>()?;
        EmbeddingSet::from_clips(&clips)
    };
    let (f1, f2, v1, b1) = (set(&flute, 100)?, set(&flute, 200)?, set(&violin, 300)?, set(&bassoon, 400)?);
    println!("\nFrechet flute/flute {:.2}  flute/violin {:.2}  flute/bassoon {:.2}", frechet(&f1, &f2)?, frechet(&f1, &v1)?, frechet(&f1, &b1)?);
    Ok(())
}
