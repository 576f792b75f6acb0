//! Synthetic instrument testbed: melodies, additive synthesis, the
//! filterbank feature codec and generated corpora.

mod codec;
mod corpus;
mod instrument;
mod melody;

pub use codec::{features, FeatureCodec, FeatureCodecSpec};
pub use corpus::{generate_corpus, ClipRecord, Corpus, CorpusSpec, Manifest, Split};
pub use instrument::{synth, synth_shifted, InstrumentSpec, BUILTIN_NAMES};
pub use melody::{apply_shift_augmentation, gen_melody, midi_to_hz, pitch_shift, Melody, NoteEvent, ShiftPolicy, MIDI_MAX, MIDI_MIN};
