use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::FeatureCodecSpec;
use super::melody::{Melody, NoteEvent};
use crate::error::{Error, Result};
use crate::rng;

/// Harmonic timbre profile with an ADSR envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub name: String,
    /// Relative amplitudes of harmonics `1..=H`.
    pub harmonic_gains: Vec<f64>,
    /// Seconds.
    pub attack: f64,
    /// Seconds.
    pub decay: f64,
    /// Level held after the decay, in (0, 1].
    pub sustain: f64,
    /// Seconds.
    pub release: f64,
    /// Inclusive MIDI range.
    pub register: (i32, i32),
    /// Spectral slope in dB per octave of harmonic number.
    pub brightness_tilt: f64,
}

pub const BUILTIN_NAMES: [&str; 4] = ["flute", "violin", "bassoon", "cello"];

impl InstrumentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("instrument.{}", self.name), m.to_string()));
        if self.harmonic_gains.is_empty() || self.harmonic_gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return bad("harmonic gains must be finite and non-negative");
        }
        if !(self.harmonic_gains[0] > 0.0) {
            return bad("the fundamental needs a positive gain");
        }
        if self.register.0 >= self.register.1 {
            return bad("register low must be below register high");
        }
        if [self.attack, self.decay, self.release].iter().any(|t| !(*t >= 0.0)) || !(self.sustain > 0.0 && self.sustain <= 1.0) {
            return bad("envelope times must be non-negative and sustain in (0, 1]");
        }
        Ok(())
    }

    /// One of the four testbed instruments: `flute` and `violin` sit in the
    /// high register, `bassoon` and `cello` an octave lower.
    pub fn builtin(name: &str) -> Result<Self> {
        let (gains, tilt, adsr, register): (Vec<f64>, f64, [f64; 4], (i32, i32)) = match name {
            "flute" => (vec![1.0, 0.3, 0.1, 0.04, 0.02], 0.0, [0.06, 0.1, 0.85, 0.08], (69, 93)),
            "violin" => ((1..=12).map(|h| 1.0 / h as f64).collect(), 0.0, [0.04, 0.08, 0.8, 0.06], (69, 93)),
            "bassoon" => (
                vec![0.5, 1.0, 0.9, 0.6, 0.7, 0.4, 0.35, 0.2, 0.15, 0.1],
                0.0,
                [0.03, 0.05, 0.9, 0.05],
                (57, 81),
            ),
            "cello" => (
                vec![1.0, 0.8, 0.6, 0.5, 0.35, 0.3, 0.2, 0.15, 0.1, 0.08],
                -2.0,
                [0.07, 0.1, 0.75, 0.1],
                (57, 81),
            ),
            other => {
                return Err(Error::config(
                    "instrument",
                    format!("unknown instrument '{other}' (known: {})", BUILTIN_NAMES.join(", ")),
                ))
            }
        };
        Ok(Self {
            name: name.to_string(),
            harmonic_gains: gains,
            attack: adsr[0],
            decay: adsr[1],
            sustain: adsr[2],
            release: adsr[3],
            register,
            brightness_tilt: tilt,
        })
    }

    pub fn builtins() -> Vec<Self> {
        BUILTIN_NAMES.iter().map(|n| Self::builtin(n).unwrap()).collect()
    }

    /// Gain of harmonic `h` (1-based) including the spectral tilt.
    pub fn harmonic_gain(&self, h: usize) -> f64 {
        self.harmonic_gains[h - 1] * 10f64.powf(self.brightness_tilt * (h as f64).log2() / 20.0)
    }

    /// Envelope at `t` seconds after note onset for a note held `held` seconds.
    pub fn envelope(&self, t: f64, held: f64) -> f64 {
        let ad = |t: f64| {
            if t < 0.0 {
                0.0
            } else if t < self.attack {
                t / self.attack
            } else if t < self.attack + self.decay {
                1.0 - (1.0 - self.sustain) * (t - self.attack) / self.decay
            } else {
                self.sustain
            }
        };
        if t < held {
            ad(t)
        } else if self.release > 0.0 {
            ad(held) * (1.0 - (t - held) / self.release).max(0.0)
        } else {
            0.0
        }
    }

    fn phases(&self) -> Vec<f64> {
        let mut r = rng::stream(0, &format!("phase/{}", self.name));
        (0..self.harmonic_gains.len())
            .map(|_| r.random_range(0.0..std::f64::consts::TAU))
            .collect()
    }
}

/// Renders `melody` with `instrument` to `codec.clip_samples` samples.
///
/// Every pitch must lie inside the instrument register.
pub fn synth(melody: &Melody, instrument: &InstrumentSpec, codec: &FeatureCodecSpec) -> Result<Vec<f64>> {
    synth_in_register(melody, instrument, codec, instrument.register)
}

/// Renders a melody transposed by `shift` semitones. The untransposed melody
/// must lie inside the instrument register.
pub fn synth_shifted(melody: &Melody, shift: i32, instrument: &InstrumentSpec, codec: &FeatureCodecSpec) -> Result<Vec<f64>> {
    let (lo, hi) = instrument.register;
    if !melody.within((lo, hi)) {
        return Err(Error::Domain(format!("melody leaves the {} register ({lo}, {hi})", instrument.name)));
    }
    let shifted = super::melody::pitch_shift(melody, shift)?;
    synth_in_register(&shifted, instrument, codec, (lo + shift, hi + shift))
}

fn synth_in_register(melody: &Melody, instrument: &InstrumentSpec, codec: &FeatureCodecSpec, register: (i32, i32)) -> Result<Vec<f64>> {
    instrument.validate()?;
    codec.validate()?;
    if !melody.within(register) {
        return Err(Error::Domain(format!(
            "melody leaves the {} register ({}, {})",
            instrument.name, register.0, register.1
        )));
    }
    let sr = codec.sample_rate;
    let mut out = vec![0.0; codec.clip_samples];
    let phases = instrument.phases();
    let norm: f64 = (1..=instrument.harmonic_gains.len()).map(|h| instrument.harmonic_gain(h)).sum();
    for note in melody.notes() {
        render_note(&mut out, note, instrument, &phases, sr, 1.0 / norm);
    }
    Ok(out)
}

fn render_note(out: &mut [f64], note: &NoteEvent, inst: &InstrumentSpec, phases: &[f64], sr: f64, scale: f64) {
    if note.amplitude == 0.0 {
        return;
    }
    let f0 = note.frequency();
    let start = (note.onset * sr).ceil() as usize;
    let end = (((note.offset() + inst.release) * sr).ceil() as usize).min(out.len());
    let mut harmonics = Vec::new();
    for h in 1..=inst.harmonic_gains.len() {
        let f = h as f64 * f0;
        if f >= 0.5 * sr {
            log::debug!("{}: harmonic {h} of midi {} ({f:.1} Hz) above Nyquist, omitted", inst.name, note.midi_pitch);
            continue;
        }
        let g = inst.harmonic_gain(h);
        if g > 0.0 {
            harmonics.push((std::f64::consts::TAU * f, g, phases[h - 1]));
        }
    }
    for (n, sample) in out.iter_mut().enumerate().take(end).skip(start) {
        let t = n as f64 / sr - note.onset;
        let env = inst.envelope(t, note.duration);
        if env == 0.0 {
            continue;
        }
        let mut v = 0.0;
        for &(w, g, ph) in &harmonics {
            v += g * (w * t + ph).sin();
        }
        *sample += note.amplitude * env * scale * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn one_note(midi: i32, amplitude: f64) -> Melody {
        Melody::new(
            vec![NoteEvent {
                midi_pitch: midi,
                onset: 0.0,
                duration: 1.5,
                amplitude,
            }],
            2.0,
        )
        .unwrap()
    }

    fn peak_hz(x: &[f64], sr: f64) -> f64 {
        let n = 4096;
        let mut buf: Vec<Complex<f64>> = x[2000..2000 + n].iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * sr / n as f64
    }

    #[test]
    fn a4_peaks_at_440() {
        let codec = FeatureCodecSpec::default();
        let inst = InstrumentSpec::builtin("violin").unwrap();
        let x = synth(&one_note(69, 1.0), &inst, &codec).unwrap();
        assert!((peak_hz(&x, codec.sample_rate) - 440.0).abs() <= codec.sample_rate / 4096.0);
    }

    #[test]
    fn octave_ratio() {
        let codec = FeatureCodecSpec::default();
        let inst = InstrumentSpec::builtin("cello").unwrap();
        let hi = peak_hz(&synth(&one_note(69, 1.0), &inst, &codec).unwrap(), codec.sample_rate);
        let lo = peak_hz(&synth(&one_note(57, 1.0), &inst, &codec).unwrap(), codec.sample_rate);
        // bin-quantized peaks; the exact ratio of the generating frequencies is 2
        assert!((hi / lo - 2.0).abs() < 0.02);
        let f = |m: i32| super::super::melody::midi_to_hz(m as f64);
        assert!((f(69) / f(57) - 2.0).abs() < 2e-3);
    }

    #[test]
    fn silent_notes_render_silence() {
        let codec = FeatureCodecSpec::default();
        let inst = InstrumentSpec::builtin("flute").unwrap();
        let x = synth(&one_note(80, 0.0), &inst, &codec).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn register_is_enforced() {
        let codec = FeatureCodecSpec::default();
        let inst = InstrumentSpec::builtin("flute").unwrap();
        assert!(matches!(synth(&one_note(60, 1.0), &inst, &codec), Err(Error::Domain(_))));
        assert!(synth_shifted(&one_note(80, 1.0), -20, &inst, &codec).is_ok());
        assert!(synth_shifted(&one_note(60, 1.0), 12, &inst, &codec).is_err());
    }

    #[test]
    fn builtins_validate() {
        for i in InstrumentSpec::builtins() {
            i.validate().unwrap();
        }
        assert!(InstrumentSpec::builtin("oboe").is_err());
    }
}
