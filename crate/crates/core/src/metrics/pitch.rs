use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::error::{Error, Result};
use crate::synth::{midi_to_hz, FeatureCodec, FeatureCodecSpec};

pub const PITCH_LOW: i32 = 36;
pub const PITCH_HIGH: i32 = 96;
pub const CLASSES: usize = 12;

/// Per-frame probabilities of the twelve pitch classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchClassMatrix {
    columns: Vec<[f64; CLASSES]>,
}

impl PitchClassMatrix {
    pub fn new(columns: Vec<[f64; CLASSES]>) -> Result<Self> {
        if columns.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("pitch-class probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { columns })
    }

    /// One-hot columns from a class sequence.
    pub fn one_hot(classes: &[usize]) -> Self {
        Self {
            columns: classes
                .iter()
                .map(|&c| {
                    let mut col = [0.0; CLASSES];
                    col[c % CLASSES] = 1.0;
                    col
                })
                .collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[[f64; CLASSES]] {
        &self.columns
    }

    /// Mean probability of each class over frames.
    pub fn mean(&self) -> [f64; CLASSES] {
        let mut m = [0.0; CLASSES];
        for col in &self.columns {
            for (a, b) in m.iter_mut().zip(col) {
                *a += b / self.columns.len() as f64;
            }
        }
        m
    }
}

/// Harmonic-template pitch scoring on codec band energies.
///
/// Each candidate MIDI pitch has a template: the log band energies of a
/// steady harmonic tone passed through the codec. A frame is scored against
/// every template by the cosine between mean-centred vectors, after both are
/// floored `depth` nats below their peak. Scores become probabilities by a
/// softmax at temperature `tau` and are summed over octaves.
#[derive(Debug, Clone)]
pub struct PitchExtractor {
    spec: FeatureCodecSpec,
    templates: Vec<Vec<f64>>,
    pub tau: f64,
    pub depth: f64,
}

impl PitchExtractor {
    pub const DEFAULT_TAU: f64 = 0.1;
    pub const DEFAULT_DEPTH: f64 = 12.0;

    pub fn new(spec: FeatureCodecSpec) -> Result<Self> {
        let codec = FeatureCodec::new(spec)?;
        let n = 4 * spec.window;
        let depth = Self::DEFAULT_DEPTH;
        let templates = (PITCH_LOW..=PITCH_HIGH)
            .map(|m| {
                let f0 = midi_to_hz(m as f64);
                let wave: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = i as f64 / spec.sample_rate;
                        (1..)
                            .map(|h| h as f64 * f0)
                            .take_while(|f| *f < 0.5 * spec.sample_rate)
                            .enumerate()
                            .map(|(k, f)| (std::f64::consts::TAU * f * t + 0.7 * k as f64).sin() / (k + 1) as f64)
                            .sum()
                    })
                    .collect();
                let feats = codec.features(&wave)?;
                let mid = feats.frames() / 2;
                let col: Vec<f64> = (0..spec.n_bands).map(|c| feats.get(c, mid)).collect();
                Ok(centre(floor_column(&col, depth)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            templates,
            tau: Self::DEFAULT_TAU,
            depth,
        })
    }

    pub fn spec(&self) -> &FeatureCodecSpec {
        &self.spec
    }

    /// Softmax probabilities over candidate pitches `PITCH_LOW..=PITCH_HIGH`
    /// for one frame of log band energies.
    pub fn pitch_probabilities(&self, column: &[f64]) -> Vec<f64> {
        let v = centre(floor_column(column, self.depth));
        let vn = norm(&v);
        let scores: Vec<f64> = self
            .templates
            .iter()
            .map(|t| if vn > 0.0 { dot(&v, t) / (vn * norm(t)) } else { 0.0 })
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| ((s - top) / self.tau).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Pitch-class probabilities of every frame of a raw (unnormalized) clip.
    pub fn pitch_class_matrix(&self, clip: &LatentClip) -> Result<PitchClassMatrix> {
        if clip.channels() != self.spec.n_bands {
            return Err(Error::config(
                "codec.n_bands",
                format!("clip has {} channels but the band layout has {}", clip.channels(), self.spec.n_bands),
            ));
        }
        let mut columns = Vec::with_capacity(clip.frames());
        let mut col = vec![0.0; clip.channels()];
        for t in 0..clip.frames() {
            for (c, v) in col.iter_mut().enumerate() {
                *v = clip.get(c, t);
            }
            let mut pc = [0.0; CLASSES];
            for (m, p) in (PITCH_LOW..=PITCH_HIGH).zip(self.pitch_probabilities(&col)) {
                pc[m.rem_euclid(12) as usize] += p;
            }
            columns.push(pc.map(|v: f64| v.min(1.0)));
        }
        Ok(PitchClassMatrix { columns })
    }
}

fn floor_column(col: &[f64], depth: f64) -> Vec<f64> {
    let top = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    col.iter().map(|v| (v - (top - depth)).max(0.0)).collect()
}

fn centre(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
