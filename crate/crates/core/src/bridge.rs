//! Dual-bridge transfer through a shared Gaussian latent.
//!
//! A clip is carried to the latent by a forward solve under the source model
//! and brought back by a reverse solve under the target model, both on the
//! same grid prefix ending at the inference top sigma.

use crate::clip::LatentClip;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::pfode::{ode_solve, Method, SolverSpec};
use crate::schedule::ScheduleParams;

/// Relative tolerance within which a requested top sigma counts as a grid node.
const SNAP_TOL: f64 = 1e-9;

/// Resolves a requested top sigma to a grid index of `schedule`.
///
/// Without `strict`, the nearest node is used. With `strict`, the request
/// must already sit on a node.
pub fn snap_top_sigma(schedule: &ScheduleParams, sigma: f64, strict: bool) -> Result<usize> {
    schedule.validate()?;
    let lo = schedule.sigma_min * (1.0 - SNAP_TOL);
    let hi = schedule.sigma_max * (1.0 + SNAP_TOL);
    if !(sigma >= lo && sigma <= hi) {
        return Err(Error::config(
            "inference_sigma",
            format!("{sigma} outside [{}, {}]", schedule.sigma_min, schedule.sigma_max),
        ));
    }
    let idx = schedule.nearest_index(sigma);
    let node = schedule.sigma_at(idx)?;
    if strict && (node - sigma).abs() > SNAP_TOL * sigma {
        return Err(Error::config(
            "inference_sigma",
            format!("{sigma} is not a grid node (nearest {node} at index {idx}) and snapping is strict"),
        ));
    }
    if (node - sigma).abs() > SNAP_TOL * sigma {
        log::debug!("inference sigma {sigma} snapped to grid node {node} (index {idx})");
    }
    Ok(idx)
}

/// A source and target model joined at a shared latent noise level.
#[derive(Clone, Copy)]
pub struct BridgeConfig<'a> {
    pub source: &'a dyn Denoiser,
    pub target: &'a dyn Denoiser,
    pub schedule: ScheduleParams,
    /// Grid index of the latent noise level.
    pub top_index: usize,
    pub method: Method,
}

impl std::fmt::Debug for BridgeConfig<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeConfig")
            .field("schedule", &self.schedule)
            .field("top_index", &self.top_index)
            .field("method", &self.method)
            .finish_non_exhaustive()
    }
}

impl<'a> BridgeConfig<'a> {
    pub fn new(
        source: &'a dyn Denoiser,
        target: &'a dyn Denoiser,
        schedule: ScheduleParams,
        inference_sigma: f64,
        method: Method,
        strict: bool,
    ) -> Result<Self> {
        if let (Some(a), Some(b)) = (source.shape(), target.shape()) {
            if a != b {
                return Err(Error::config(
                    "checkpoints",
                    format!("source expects {}x{} clips, target {}x{}", a.0, a.1, b.0, b.1),
                ));
            }
        }
        if let (Some(a), Some(b)) = (source.sigma_data(), target.sigma_data()) {
            if a != b {
                return Err(Error::config("sigma_data", format!("source uses {a}, target {b}")));
            }
        }
        let top_index = snap_top_sigma(&schedule, inference_sigma, strict)?;
        Ok(Self {
            source,
            target,
            schedule,
            top_index,
            method,
        })
    }

    /// The latent noise level actually used.
    pub fn top_sigma(&self) -> f64 {
        self.schedule.grid()[self.top_index]
    }

    /// The same bridge with source and target exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            source: self.target,
            target: self.source,
            ..*self
        }
    }

    fn forward_spec(&self) -> SolverSpec {
        SolverSpec::forward(self.method, self.schedule, 0, self.top_index)
    }

    fn reverse_spec(&self) -> SolverSpec {
        SolverSpec::reverse(self.method, self.schedule, self.top_index, 0)
    }
}

/// Carries a source clip to the shared latent.
pub fn encode(x_src: &LatentClip, config: &BridgeConfig<'_>) -> Result<LatentClip> {
    ode_solve(x_src, config.source, &config.forward_spec())
}

/// Generates a clip by a reverse solve from a latent at the top sigma.
pub fn sample_shared(latent: &LatentClip, model: &dyn Denoiser, config: &BridgeConfig<'_>) -> Result<LatentClip> {
    if let Some((c, t)) = model.shape() {
        latent.ensure_shape(c, t)?;
    }
    latent.ensure_finite()?;
    ode_solve(latent, model, &config.reverse_spec())
}

/// Source to target transfer.
pub fn transfer(x_src: &LatentClip, config: &BridgeConfig<'_>) -> Result<LatentClip> {
    let latent = encode(x_src, config)?;
    sample_shared(&latent, config.target, config)
}

/// Source to target and back; returns the reconstructed source clip.
pub fn cycle(x_src: &LatentClip, config: &BridgeConfig<'_>) -> Result<LatentClip> {
    let there = transfer(x_src, config)?;
    transfer(&there, &config.reversed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianMixture;
    use crate::rng;

    fn mixtures() -> (GaussianMixture, GaussianMixture) {
        let a = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0, -2.5], vec![0.0, 2.5]],
            vec![vec![5.0, 0.05], vec![5.0, 0.05]],
        )
        .unwrap();
        let b = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-2.5, 0.0], vec![2.5, 0.0]],
            vec![vec![0.05, 5.0], vec![0.05, 5.0]],
        )
        .unwrap();
        (a, b)
    }

    #[test]
    fn bottom_sigma_is_identity() {
        let (a, b) = mixtures();
        let s = ScheduleParams::default();
        let cfg = BridgeConfig::new(&a, &b, s, s.sigma_min, Method::Heun, true).unwrap();
        let x = LatentClip::from_point(&[0.4, 2.2]).unwrap();
        assert_eq!(transfer(&x, &cfg).unwrap(), x);
        assert_eq!(cycle(&x, &cfg).unwrap(), x);
    }

    #[test]
    fn self_bridge_is_near_identity() {
        let (a, _) = mixtures();
        let s = ScheduleParams::default();
        let cfg = BridgeConfig::new(&a, &a, s, 100.0, Method::Heun, true).unwrap();
        let mut r = rng::stream(11, "self");
        for _ in 0..30 {
            let x = LatentClip::from_point(&a.sample(&mut r)).unwrap();
            let y = transfer(&x, &cfg).unwrap();
            assert!(y.normalized_distance(&x) < 1e-2);
        }
    }

    #[test]
    fn transfer_is_encode_then_sample() {
        let (a, b) = mixtures();
        let s = ScheduleParams::default();
        let cfg = BridgeConfig::new(&a, &b, s, 20.0, Method::Heun, false).unwrap();
        let x = LatentClip::from_point(&[1.0, -2.4]).unwrap();
        let lat = encode(&x, &cfg).unwrap();
        assert_eq!(transfer(&x, &cfg).unwrap(), sample_shared(&lat, &b, &cfg).unwrap());
        assert_eq!(sample_shared(&lat, &b, &cfg).unwrap(), sample_shared(&lat, &b, &cfg).unwrap());
    }

    #[test]
    fn snapping() {
        let s = ScheduleParams::default();
        let g = s.grid();
        assert_eq!(snap_top_sigma(&s, g[73], true).unwrap(), 73);
        assert_eq!(snap_top_sigma(&s, 100.0, true).unwrap(), 99);
        assert_eq!(snap_top_sigma(&s, 0.5 * (g[40] + g[41]) + 1e-9, false).unwrap(), 41);
        assert!(matches!(snap_top_sigma(&s, 5.0, true), Err(Error::Config { .. })));
        assert!(snap_top_sigma(&s, 200.0, false).is_err());
        assert!(snap_top_sigma(&s, 0.001, false).is_err());
    }

    #[test]
    fn mismatched_models_are_rejected() {
        let (a, _) = mixtures();
        let c = GaussianMixture::single(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let s = ScheduleParams::default();
        let err = BridgeConfig::new(&a, &c, s, 100.0, Method::Heun, false).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let cfg = BridgeConfig::new(&a, &a, s, 100.0, Method::Heun, false).unwrap();
        let bad = LatentClip::from_point(&[0.0; 3]).unwrap();
        assert!(matches!(sample_shared(&bad, &a, &cfg), Err(Error::Contract(_))));
    }
}
