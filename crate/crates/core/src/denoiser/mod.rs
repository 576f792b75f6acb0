//! Denoisers `D(x; sigma)`: the preconditioned neural denoiser, its training
//! loop, and the closed-form Gaussian-mixture denoiser used as an exact oracle.

mod gmm;
mod network;
mod train;

pub use gmm::GaussianMixture;
pub use network::{noise_embedding, Architecture, Network, TensorSpec};
pub use train::{
    batch_loss, ema_decay, train, AdamW, Ema, TrainingConfig, TrainingReport,
};

use rand::Rng;

use crate::clip::{ChannelStats, LatentClip};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{precond, ScheduleParams};

/// A denoiser `D(x; sigma)` estimating the clean signal from a noisy one.
pub trait Denoiser: Sync {
    /// The clip shape this denoiser accepts, when fixed. `None` means any
    /// frame count accepted by the implementation.
    fn shape(&self) -> Option<(usize, usize)>;

    fn denoise(&self, x: &LatentClip, sigma: f64) -> Result<LatentClip>;

    /// Data scale the denoiser was built for, if it carries one.
    fn sigma_data(&self) -> Option<f64> {
        None
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn shape(&self) -> Option<(usize, usize)> {
        (**self).shape()
    }

    fn denoise(&self, x: &LatentClip, sigma: f64) -> Result<LatentClip> {
        (**self).denoise(x, sigma)
    }

    fn sigma_data(&self) -> Option<f64> {
        (**self).sigma_data()
    }
}

/// Uniform `+-1/sqrt(fan_in)` initialization from a fixed seed.
pub fn init_params(arch: &Architecture, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "init");
    let mut params = vec![0.0; arch.param_count()];
    for spec in arch.layout() {
        let bound = 1.0 / (spec.fan_in as f64).sqrt();
        for p in &mut params[spec.range()] {
            *p = r.random_range(-bound..bound);
        }
    }
    params
}

/// A trained (or freshly initialized) preconditioned network denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDenoiser {
    pub arch: Architecture,
    pub schedule: ScheduleParams,
    /// Corpus statistics used to normalize the data this model was trained on.
    pub stats: ChannelStats,
    /// Frame count the model was trained with.
    pub frames: usize,
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub seed: u64,
    /// Evaluate with EMA weights (default) or raw weights.
    pub use_ema: bool,
}

impl NeuralDenoiser {
    pub fn new(arch: Architecture, schedule: ScheduleParams, stats: ChannelStats, frames: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        arch.check_frames(frames)?;
        schedule.validate()?;
        if stats.channels() != arch.channels {
            return Err(Error::Contract(format!(
                "statistics cover {} channels, architecture {}",
                stats.channels(),
                arch.channels
            )));
        }
        let params = init_params(&arch, seed);
        Ok(Self {
            arch,
            schedule,
            stats,
            frames,
            ema: params.clone(),
            params,
            seed,
            use_ema: true,
        })
    }

    pub fn weights(&self) -> &[f64] {
        if self.use_ema {
            &self.ema
        } else {
            &self.params
        }
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(self.arch, self.weights()).expect("weights match architecture")
    }

    /// `F(x_scaled; embedding)`.
    pub fn network_apply(&self, x_scaled: &LatentClip, noise_embedding: &[f64]) -> Result<LatentClip> {
        self.network().apply(x_scaled, noise_embedding)
    }

    pub fn data_scale(&self) -> f64 {
        self.schedule.sigma_data
    }
}

impl Denoiser for NeuralDenoiser {
    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.arch.channels, self.frames))
    }

    fn sigma_data(&self) -> Option<f64> {
        Some(self.data_scale())
    }

    /// `c_skip x + c_out F(c_in x; c_noise)`.
    fn denoise(&self, x: &LatentClip, sigma: f64) -> Result<LatentClip> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("denoiser needs sigma > 0, got {sigma}")));
        }
        x.ensure_shape(self.arch.channels, self.frames)?;
        x.ensure_finite()?;
        let c = precond(sigma, self.data_scale())?;
        let emb = noise_embedding(c.noise()?, self.arch.noise_features);
        let scaled = x.map_data(x.data().iter().map(|v| c.c_in * v).collect());
        let f = self.network_apply(&scaled, &emb)?;
        let out = x
            .data()
            .iter()
            .zip(f.data())
            .map(|(xv, fv)| c.c_skip * xv + c.c_out * fv)
            .collect();
        Ok(x.map_data(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::precond;

    fn small_model(seed: u64) -> NeuralDenoiser {
        let arch = Architecture {
            channels: 3,
            base: 4,
            mid: 5,
            kernel: 3,
            noise_features: 6,
        };
        NeuralDenoiser::new(arch, ScheduleParams::default(), ChannelStats::identity(3), 8, seed).unwrap()
    }

    fn clip(seed: u64) -> LatentClip {
        let mut r = rng::stream(seed, "clip");
        LatentClip::new(3, 8, (0..24).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_network_reduces_to_skip() {
        let mut m = small_model(1);
        m.ema.iter_mut().for_each(|v| *v = 0.0);
        let x = clip(2);
        let out = m.denoise(&x, 1.0).unwrap();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, 0.5 * v);
        }
    }

    #[test]
    fn denoise_is_preconditioned_network() {
        let m = small_model(3);
        let mut r = rng::stream(4, "sig");
        for i in 0..20 {
            let x = clip(10 + i);
            let sigma: f64 = 10f64.powf(r.random_range(-2.0..2.0));
            let c = precond(sigma, 1.0).unwrap();
            let scaled = x.map_data(x.data().iter().map(|v| v * c.c_in).collect());
            let f = m
                .network_apply(&scaled, &noise_embedding(c.noise().unwrap(), 6))
                .unwrap();
            let d = m.denoise(&x, sigma).unwrap();
            for j in 0..x.dim() {
                let lhs = d.data()[j] - c.c_skip * x.data()[j];
                let rhs = c.c_out * f.data()[j];
                assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn denoise_rejects_bad_inputs() {
        let m = small_model(5);
        assert!(matches!(m.denoise(&LatentClip::zeros(3, 4), 1.0), Err(Error::Contract(_))));
        assert!(matches!(m.denoise(&clip(1), 0.0), Err(Error::Domain(_))));
        let mut bad = clip(1);
        bad.data_mut()[3] = f64::INFINITY;
        assert!(matches!(m.denoise(&bad, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(small_model(9).params, small_model(9).params);
        assert_ne!(small_model(9).params, small_model(10).params);
    }
}
