//! Renders melodies with the built-in instruments, shows their features and
//! pitch classes, and writes a small corpus.
//!
//! cargo run --example synth_corpus -- [out_dir]

use dualbridge::metrics::PitchExtractor;
use dualbridge::synth::{gen_melody, generate_corpus, synth, CorpusSpec, FeatureCodec, FeatureCodecSpec, InstrumentSpec, Split};

const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

fn main() -> dualbridge::Result<()> {
    let spec = FeatureCodecSpec::default();
    let codec = FeatureCodec::new(spec)?;
    let extractor = PitchExtractor::new(spec)?;
    for inst in InstrumentSpec::builtins() {
        let melody = gen_melody(3, inst.register, 6, (180.0, 220.0))?;
        let notes: Vec<String> = melody.notes().iter().map(|n| format!("{}{}", NAMES[n.midi_pitch.rem_euclid(12) as usize], n.midi_pitch / 12 - 1)).collect();
        let clip = codec.features(&synth(&melody, &inst, &spec)?)?;
        let pcm = extractor.pitch_class_matrix(&clip)?;
        let heard: Vec<&str> = pcm
            .columns()
            .iter()
            .step_by(4)
            .map(|c| NAMES[(0..12).max_by(|a, b| c[*a].total_cmp(&c[*b])).unwrap()])
            .collect();
        println!("{:<8} register {:?}  {} x {} clip", inst.name, inst.register, clip.channels(), clip.frames());
        println!("  notes  {}", notes.join(" "));
        println!("  heard  {}", heard.join(" "));
    }

    let corpus = generate_corpus(&CorpusSpec {
        instruments: vec!["flute".into(), "bassoon".into()],
        clips_per_instrument: 20,
        augmented: vec!["flute".into()],
        ..CorpusSpec::default()
    })?;
    let shifted = corpus.manifest.records.iter().filter(|r| r.shift.is_some()).count();
    println!(
        "\ncorpus: {} clips, {} train flute clips, {} shifted by augmentation",
        corpus.clips.len(),
        corpus.select("flute", Split::Train).len(),
        shifted
    );
    if let Some(dir) = std::env::args().nth(1) {
        corpus.write(dir.as_ref())?;
        println!("wrote {dir}");
    }
    Ok(())
}
