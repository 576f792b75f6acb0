use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::clip::{ChannelStats, LatentClip};
use crate::error::{Error, Result};

/// Geometry of the filterbank feature codec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureCodecSpec {
    /// Hz.
    pub sample_rate: f64,
    pub n_bands: usize,
    /// Samples between frame centres.
    pub hop: usize,
    /// Hann window length in samples.
    pub window: usize,
    /// Zero-padded transform length.
    pub fft_size: usize,
    /// Lowest band edge, Hz.
    pub f_low: f64,
    /// Highest band edge, Hz.
    pub f_high: f64,
    /// Added to band energies before the log.
    pub log_floor: f64,
    /// Samples per rendered clip.
    pub clip_samples: usize,
}

impl Default for FeatureCodecSpec {
    fn default() -> Self {
        Self {
            sample_rate: 8000.0,
            n_bands: 32,
            hop: 256,
            window: 512,
            fft_size: 4096,
            f_low: 60.0,
            f_high: 3800.0,
            log_floor: 1e-4,
            clip_samples: 16384,
        }
    }
}

impl FeatureCodecSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::config(format!("codec.{k}"), m));
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate", "must be positive".into());
        }
        if self.n_bands < 12 {
            return bad("n_bands", format!("{} bands, need at least 12", self.n_bands));
        }
        if self.hop == 0 || self.window < self.hop || self.fft_size < self.window {
            return bad("window", "need 0 < hop <= window <= fft_size".into());
        }
        if !(self.f_low > 0.0 && self.f_high > self.f_low && self.f_high < 0.5 * self.sample_rate) {
            return bad("f_high", "band edges must increase and stay below Nyquist".into());
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor", "must be positive".into());
        }
        if self.clip_samples < self.window {
            return bad("clip_samples", "clips must hold at least one window".into());
        }
        let map = self.bin_bands();
        for b in 0..self.n_bands {
            if !map.iter().any(|m| *m == Some(b)) {
                return bad("fft_size", format!("band {b} contains no transform bin"));
            }
        }
        Ok(())
    }

    /// `n_bands + 1` geometrically spaced edges from `f_low` to `f_high`.
    pub fn band_edges(&self) -> Vec<f64> {
        let ratio = self.f_high / self.f_low;
        (0..=self.n_bands)
            .map(|b| self.f_low * ratio.powf(b as f64 / self.n_bands as f64))
            .collect()
    }

    /// Band index of each one-sided transform bin.
    fn bin_bands(&self) -> Vec<Option<usize>> {
        let edges = self.band_edges();
        (0..=self.fft_size / 2)
            .map(|k| {
                let f = k as f64 * self.sample_rate / self.fft_size as f64;
                if f < edges[0] || f >= edges[self.n_bands] {
                    None
                } else {
                    Some(edges.partition_point(|e| *e <= f) - 1)
                }
            })
            .collect()
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop
    }

    /// Frames per rendered clip.
    pub fn frames(&self) -> usize {
        self.frames_for(self.clip_samples)
    }

    /// Band holding frequency `f`, if any.
    pub fn band_of(&self, f: f64) -> Option<usize> {
        let edges = self.band_edges();
        if f < edges[0] || f >= edges[self.n_bands] {
            None
        } else {
            Some(edges.partition_point(|e| *e <= f) - 1)
        }
    }
}

/// A planned codec ready to featurize waveforms.
pub struct FeatureCodec {
    spec: FeatureCodecSpec,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    window_energy: f64,
    bands: Vec<Option<usize>>,
}

impl FeatureCodec {
    pub fn new(spec: FeatureCodecSpec) -> Result<Self> {
        spec.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(spec.fft_size);
        let window: Vec<f64> = (0..spec.window)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / spec.window as f64).cos())
            .collect();
        let window_energy = window.iter().map(|w| w * w).sum();
        Ok(Self {
            bands: spec.bin_bands(),
            spec,
            fft,
            window,
            window_energy,
        })
    }

    pub fn spec(&self) -> &FeatureCodecSpec {
        &self.spec
    }

    /// Band energies, `n_bands x frames` channel-major, without the log.
    ///
    /// Frame `t` is centred on sample `t*hop + hop/2`; samples outside the
    /// waveform count as zero.
    pub fn band_energies(&self, waveform: &[f64]) -> Result<(usize, Vec<f64>)> {
        let s = &self.spec;
        if waveform.len() < s.window {
            return Err(Error::Data(format!(
                "waveform of {} samples is shorter than the {}-sample window",
                waveform.len(),
                s.window
            )));
        }
        let frames = s.frames_for(waveform.len());
        let mut out = vec![0.0; s.n_bands * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); s.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = (t * s.hop + s.hop / 2) as isize - (s.window / 2) as isize;
            for (n, w) in self.window.iter().enumerate() {
                let i = start + n as isize;
                if i >= 0 && (i as usize) < waveform.len() {
                    buf[n].re = w * waveform[i as usize];
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, band) in self.bands.iter().enumerate() {
                if let Some(b) = band {
                    out[b * frames + t] += buf[k].norm_sqr() / self.window_energy;
                }
            }
        }
        Ok((frames, out))
    }

    /// Log band energies `ln(floor + E)` as a `n_bands x frames` clip.
    pub fn features(&self, waveform: &[f64]) -> Result<LatentClip> {
        let (frames, e) = self.band_energies(waveform)?;
        let floor = self.spec.log_floor;
        LatentClip::new(self.spec.n_bands, frames, e.into_iter().map(|v| (floor + v).ln()).collect())
    }

    /// Features normalized by frozen corpus statistics.
    pub fn features_normalized(&self, waveform: &[f64], stats: Option<&ChannelStats>) -> Result<LatentClip> {
        let f = self.features(waveform)?;
        match stats {
            Some(s) => s.normalize(&f),
            None => Ok(f),
        }
    }
}

/// One-shot featurization; plans a transform per call.
pub fn features(waveform: &[f64], spec: &FeatureCodecSpec) -> Result<LatentClip> {
    FeatureCodec::new(*spec)?.features(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth, InstrumentSpec, Melody, NoteEvent};
    use rand::Rng;

    #[test]
    fn default_geometry() {
        let s = FeatureCodecSpec::default();
        s.validate().unwrap();
        assert_eq!(s.frames(), 64);
        let e = s.band_edges();
        assert_eq!(e.len(), 33);
        assert!((e[0] - 60.0).abs() < 1e-12 && (e[32] - 3800.0).abs() < 1e-9);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        let coarse = FeatureCodecSpec {
            fft_size: 512,
            ..s
        };
        assert!(coarse.validate().is_err());
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let s = FeatureCodecSpec::default();
        let f = features(&vec![0.0; s.clip_samples], &s).unwrap();
        assert_eq!(f.shape(), (32, 64));
        assert!(f.data().iter().all(|&v| v == s.log_floor.ln()));
        assert!(matches!(features(&[0.0; 100], &s), Err(Error::Data(_))));
    }

    #[test]
    fn a4_lands_in_its_band() {
        let s = FeatureCodecSpec::default();
        let m = Melody::new(
            vec![NoteEvent {
                midi_pitch: 69,
                onset: 0.0,
                duration: 2.0,
                amplitude: 1.0,
            }],
            2.0,
        )
        .unwrap();
        let x = synth(&m, &InstrumentSpec::builtin("flute").unwrap(), &s).unwrap();
        let f = features(&x, &s).unwrap();
        let means: Vec<f64> = (0..32).map(|c| f.channel(c).iter().sum::<f64>() / 64.0).collect();
        let best = (0..32).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        assert_eq!(Some(best), s.band_of(440.0));
    }

    #[test]
    fn energies_scale_quadratically() {
        let s = FeatureCodecSpec::default();
        let codec = FeatureCodec::new(s).unwrap();
        let mut r = crate::rng::stream(5, "noise");
        let x: Vec<f64> = (0..s.clip_samples).map(|_| r.random_range(-0.5..0.5)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (_, a) = codec.band_energies(&x).unwrap();
        let (_, b) = codec.band_energies(&x2).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((q.ln() - p.ln() - 4f64.ln()).abs() < 1e-6);
        }
    }
}
