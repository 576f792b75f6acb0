use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MIDI_MIN: i32 = 21;
pub const MIDI_MAX: i32 = 108;

/// Pitch classes of the C major scale.
const DIATONIC: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub midi_pitch: i32,
    /// Seconds.
    pub onset: f64,
    /// Seconds.
    pub duration: f64,
    /// Linear gain in (0, 1]; zero is accepted for silent placeholders.
    pub amplitude: f64,
}

impl NoteEvent {
    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }

    /// Fundamental frequency in Hz.
    pub fn frequency(&self) -> f64 {
        midi_to_hz(self.midi_pitch as f64)
    }
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// A monophonic note sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Melody {
    notes: Vec<NoteEvent>,
    total_duration: f64,
}

impl Melody {
    pub fn new(notes: Vec<NoteEvent>, total_duration: f64) -> Result<Self> {
        for n in &notes {
            if !(n.duration > 0.0) || !n.onset.is_finite() || n.onset < 0.0 {
                return Err(Error::Data(format!("bad note timing {n:?}")));
            }
            if !(0.0..=1.0).contains(&n.amplitude) {
                return Err(Error::Data(format!("note amplitude {} outside [0, 1]", n.amplitude)));
            }
            if !(MIDI_MIN..=MIDI_MAX).contains(&n.midi_pitch) {
                return Err(Error::Domain(format!("midi pitch {} outside [{MIDI_MIN}, {MIDI_MAX}]", n.midi_pitch)));
            }
        }
        for w in notes.windows(2) {
            if w[1].onset < w[0].offset() - 1e-12 {
                return Err(Error::Data("notes overlap; melodies are monophonic".into()));
            }
        }
        if let Some(last) = notes.last() {
            if last.offset() > total_duration + 1e-9 {
                return Err(Error::Data("last note ends after the melody".into()));
            }
        }
        Ok(Self { notes, total_duration })
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn pitch_range(&self) -> Option<(i32, i32)> {
        let lo = self.notes.iter().map(|n| n.midi_pitch).min()?;
        let hi = self.notes.iter().map(|n| n.midi_pitch).max()?;
        Some((lo, hi))
    }

    /// Whether every pitch lies in `[lo, hi]`.
    pub fn within(&self, register: (i32, i32)) -> bool {
        self.notes
            .iter()
            .all(|n| n.midi_pitch >= register.0 && n.midi_pitch <= register.1)
    }
}

/// A diatonic random walk of `n_notes` one-beat notes inside `register`.
///
/// `tempo_range` is in beats per minute; the tempo is drawn once per melody.
pub fn gen_melody(seed: u64, register: (i32, i32), n_notes: usize, tempo_range: (f64, f64)) -> Result<Melody> {
    let (lo, hi) = register;
    if lo < MIDI_MIN || hi > MIDI_MAX {
        return Err(Error::config("register", format!("({lo}, {hi}) outside MIDI [{MIDI_MIN}, {MIDI_MAX}]")));
    }
    if hi - lo < 5 {
        return Err(Error::config("register", format!("({lo}, {hi}) narrower than 5 semitones")));
    }
    let (t0, t1) = tempo_range;
    if !(t0 > 0.0 && t1 >= t0 && t1.is_finite()) {
        return Err(Error::config("tempo_range", format!("({t0}, {t1}) is not a positive range")));
    }
    let scale: Vec<i32> = (lo..=hi).filter(|p| DIATONIC.contains(&p.rem_euclid(12))).collect();
    let mut r = rng::stream(seed, "melody");
    let bpm = if t1 > t0 { r.random_range(t0..=t1) } else { t0 };
    let beat = 60.0 / bpm;
    let last = scale.len() as i64 - 1;
    let mut idx = r.random_range(0..scale.len()) as i64;
    let mut notes = Vec::with_capacity(n_notes);
    for k in 0..n_notes {
        if k > 0 {
            idx += r.random_range(-2..=2i64);
            if idx < 0 {
                idx = -idx;
            }
            if idx > last {
                idx = 2 * last - idx;
            }
            idx = idx.clamp(0, last);
        }
        notes.push(NoteEvent {
            midi_pitch: scale[idx as usize],
            onset: k as f64 * beat,
            duration: 0.9 * beat,
            amplitude: r.random_range(0.6..=1.0),
        });
    }
    Melody::new(notes, n_notes as f64 * beat)
}

/// Transposes every note by `semitones`.
pub fn pitch_shift(melody: &Melody, semitones: i32) -> Result<Melody> {
    let notes = melody
        .notes
        .iter()
        .map(|n| {
            let p = n.midi_pitch + semitones;
            if (MIDI_MIN..=MIDI_MAX).contains(&p) {
                Ok(NoteEvent { midi_pitch: p, ..*n })
            } else {
                Err(Error::Domain(format!("shift {semitones} moves pitch {} outside MIDI range", n.midi_pitch)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Melody {
        notes,
        total_duration: melody.total_duration,
    })
}

/// Random downward transposition applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPolicy {
    pub probability: f64,
    /// Smallest downward shift in semitones.
    pub min_shift: i32,
    /// Largest downward shift in semitones.
    pub max_shift: i32,
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        Self {
            probability: 0.35,
            min_shift: 1,
            max_shift: 25,
        }
    }
}

impl ShiftPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config("augmentation.probability", "must lie in [0, 1]"));
        }
        if self.min_shift < 0 || self.max_shift < self.min_shift {
            return Err(Error::config("augmentation.shift", "need 0 <= min_shift <= max_shift"));
        }
        Ok(())
    }
}

/// With probability `p`, shifts the melody down by a uniform integer in
/// `[min_shift, max_shift]`. Returns the applied shift (negative) if any.
pub fn apply_shift_augmentation<R: Rng + ?Sized>(melody: &Melody, rng: &mut R, policy: &ShiftPolicy) -> Result<(Melody, Option<i32>)> {
    policy.validate()?;
    if policy.probability > 0.0 && rng.random_bool(policy.probability) {
        let s = -rng.random_range(policy.min_shift..=policy.max_shift);
        Ok((pitch_shift(melody, s)?, Some(s)))
    } else {
        Ok((melody.clone(), None))
    }
}
