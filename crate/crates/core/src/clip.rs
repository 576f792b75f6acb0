//! The channels-by-frames tensor every diffusion operation acts on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels x frames` real tensor stored row-major (channel-major).
///
/// Analytic oracles in low dimension use `frames == 1`, so a point in R^d is a
/// clip with `d` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
    pub domain_label: Option<String>,
}

impl LatentClip {
    pub fn new(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || frames == 0 {
            return Err(Error::Contract(format!(
                "clip shape must be non-empty, got {channels}x{frames}"
            )));
        }
        if data.len() != channels * frames {
            return Err(Error::Contract(format!(
                "clip {channels}x{frames} needs {} values, got {}",
                channels * frames,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite clip entry at index {i}")));
        }
        Ok(Self {
            channels,
            frames,
            data,
            domain_label: None,
        })
    }

    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self {
            channels,
            frames,
            data: vec![0.0; channels * frames],
            domain_label: None,
        }
    }

    /// A point in R^d as a `d x 1` clip.
    pub fn from_point(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), 1, point.to_vec())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.domain_label = Some(label.into());
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.frames)
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.frames + t]
    }

    /// Same shape and label, new values. Values are not re-validated.
    pub fn map_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            channels: self.channels,
            frames: self.frames,
            data,
            domain_label: self.domain_label.clone(),
        }
    }

    pub fn ensure_shape(&self, channels: usize, frames: usize) -> Result<()> {
        if self.shape() != (channels, frames) {
            return Err(Error::Contract(format!(
                "expected clip shape {channels}x{frames}, got {}x{}",
                self.channels, self.frames
            )));
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Data(format!("non-finite clip entry at index {i}"))),
            None => Ok(()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `|self - reference| / |reference|`, the reconstruction error used by
    /// cycle studies.
    pub fn normalized_distance(&self, reference: &Self) -> f64 {
        let n = reference.norm();
        if n == 0.0 {
            self.norm()
        } else {
            self.distance(reference) / n
        }
    }

    /// Per-channel mean over frames: the clip's embedding vector.
    pub fn time_average(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.channel(c).iter().sum::<f64>() / self.frames as f64)
            .collect()
    }
}

/// Frozen per-channel statistics of a training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation of every channel over all frames
    /// of all clips.
    pub fn from_corpus<'a, I>(clips: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LatentClip>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut shape = None;
        let clips: Vec<&LatentClip> = clips.into_iter().collect();
        // Two-pass for the variance; the corpus fits in memory.
        for clip in &clips {
            match shape {
                None => {
                    shape = Some(clip.shape());
                    sum = vec![0.0; clip.channels];
                }
                Some(s) if s != clip.shape() => {
                    return Err(Error::Contract("corpus clips differ in shape".into()))
                }
                _ => {}
            }
            for c in 0..clip.channels {
                sum[c] += clip.channel(c).iter().sum::<f64>();
            }
            count += clip.frames;
        }
        let Some((channels, _)) = shape else {
            return Err(Error::Data("cannot compute statistics of an empty corpus".into()));
        };
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        sum_sq.resize(channels, 0.0);
        for clip in &clips {
            for c in 0..channels {
                sum_sq[c] += clip
                    .channel(c)
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>();
            }
        }
        let std = sum_sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, clip: &LatentClip) -> Result<LatentClip> {
        self.check(clip)?;
        let f = clip.frames;
        let data = clip
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i / f]) / self.std[i / f])
            .collect();
        Ok(clip.map_data(data))
    }

    pub fn denormalize(&self, clip: &LatentClip) -> Result<LatentClip> {
        self.check(clip)?;
        let f = clip.frames;
        let data = clip
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i / f] + self.mean[i / f])
            .collect();
        Ok(clip.map_data(data))
    }

    fn check(&self, clip: &LatentClip) -> Result<()> {
        if clip.channels != self.channels() {
            return Err(Error::Contract(format!(
                "statistics cover {} channels, clip has {}",
                self.channels(),
                clip.channels
            )));
        }
        Ok(())
    }
}
