//! Denoising score-matching training with AdamW and an EMA copy of the weights.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::network::{noise_embedding, Architecture, Network};
use super::NeuralDenoiser;
use crate::clip::{ChannelStats, LatentClip};
use crate::coupling::{self, CouplingConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{precond, ScheduleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Optimizer steps.
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ema_beta: f64,
    pub ema_power: f64,
    pub seed: u64,
    pub coupling: CouplingConfig,
    /// Network shape; `None` picks [`Architecture::standard`] for the data's channel count.
    pub arch: Option<Architecture>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 2000,
            lr: 1e-4,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 1e-3,
            ema_beta: 0.995,
            ema_power: 0.7,
            seed: 0,
            coupling: CouplingConfig::default(),
            arch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean loss over the last 50 steps.
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    pub epochs: f64,
    pub wall_seconds: f64,
    /// Mean optimal-transport assignment cost per epoch (empty when coupling is off).
    pub assignment_costs: Vec<f64>,
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, c: &TrainingConfig) -> Self {
        Self::new(n, c.lr, c.beta1, c.beta2, c.eps, c.weight_decay)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * (self.weight_decay * params[i] + mh / (vh.sqrt() + self.eps));
        }
    }
}

/// Effective EMA decay after optimizer step `t` (0-based): `beta (1 - (1+t)^-power)`.
pub fn ema_decay(beta: f64, power: f64, t: usize) -> f64 {
    beta * (1.0 - (1.0 + t as f64).powf(-power))
}

#[derive(Debug, Clone)]
pub struct Ema {
    pub beta: f64,
    pub power: f64,
    t: usize,
}

impl Ema {
    pub fn new(beta: f64, power: f64) -> Self {
        Self { beta, power, t: 0 }
    }

    pub fn update(&mut self, ema: &mut [f64], params: &[f64]) {
        let d = ema_decay(self.beta, self.power, self.t);
        for (e, p) in ema.iter_mut().zip(params) {
            *e = d * *e + (1.0 - d) * p;
        }
        self.t += 1;
    }
}

/// Weighted denoising loss of one batch,
/// `(1/B) sum_j lambda(sigma_j) mean((x0_j - D(x0_j + sigma_j eps_j; sigma_j))^2)`.
///
/// Computed in the equivalent form `mean((F - target)^2)` with
/// `target = (x0 - c_skip x) / c_out`. When `grads` is given, the parameter
/// gradient is accumulated into it.
pub fn batch_loss(
    arch: Architecture,
    params: &[f64],
    sigma_data: f64,
    x0: &[&LatentClip],
    noise: &[LatentClip],
    sigmas: &[f64],
    mut grads: Option<&mut [f64]>,
) -> Result<f64> {
    let b = x0.len();
    if b == 0 || noise.len() != b || sigmas.len() != b {
        return Err(Error::Contract("batch parts must have equal, non-zero length".into()));
    }
    let net = Network::new(arch, params)?;
    let mut total = 0.0;
    for j in 0..b {
        let sigma = sigmas[j];
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("training sigma must be > 0, got {sigma}")));
        }
        let clean = x0[j];
        let frames = clean.frames();
        let n = clean.dim() as f64;
        let c = precond(sigma, sigma_data)?;
        let noisy: Vec<f64> = clean
            .data()
            .iter()
            .zip(noise[j].data())
            .map(|(a, e)| a + sigma * e)
            .collect();
        let target: Vec<f64> = clean
            .data()
            .iter()
            .zip(&noisy)
            .map(|(a, x)| (a - c.c_skip * x) / c.c_out)
            .collect();
        let scaled: Vec<f64> = noisy.iter().map(|v| c.c_in * v).collect();
        let emb = noise_embedding(c.noise()?, arch.noise_features);
        let mut sample_loss = 0.0;
        match grads.as_deref_mut() {
            Some(g) => {
                net.apply_with_grad(
                    &scaled,
                    frames,
                    &emb,
                    |f| {
                        sample_loss = f.iter().zip(&target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / n;
                        f.iter()
                            .zip(&target)
                            .map(|(a, t)| 2.0 * (a - t) / (n * b as f64))
                            .collect()
                    },
                    g,
                );
            }
            None => {
                let clip = LatentClip::new(clean.channels(), frames, scaled)?;
                let f = net.apply(&clip, &emb)?;
                sample_loss = f.data().iter().zip(&target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / n;
            }
        }
        total += sample_loss;
    }
    Ok(total / b as f64)
}

fn standard_normal_clip<R: Rng + ?Sized>(channels: usize, frames: usize, r: &mut R) -> LatentClip {
    let data = (0..channels * frames).map(|_| StandardNormal.sample(r)).collect();
    LatentClip::new(channels, frames, data).expect("finite normal draws")
}

/// Trains a denoiser on normalized clips.
///
/// Noise levels are drawn uniformly over the grid indices `{0, .., N-1}` of
/// `schedule`. With coupling enabled, each batch's noise is re-paired to the
/// data by minibatch optimal transport before the noise levels are drawn.
pub fn train(
    dataset: &[LatentClip],
    stats: &ChannelStats,
    schedule: ScheduleParams,
    config: &TrainingConfig,
) -> Result<(NeuralDenoiser, TrainingReport)> {
    let Some(first) = dataset.first() else {
        return Err(Error::config("dataset", "training set is empty"));
    };
    let (channels, frames) = first.shape();
    if dataset.iter().any(|c| c.shape() != (channels, frames)) {
        return Err(Error::Contract("training clips differ in shape".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let arch = config.arch.unwrap_or_else(|| Architecture::standard(channels));
    if arch.channels != channels {
        return Err(Error::config("architecture.channels", "does not match the data"));
    }
    config.coupling.validate(channels, frames)?;
    let mut model = NeuralDenoiser::new(arch, schedule, stats.clone(), frames, config.seed)?;
    let grid = schedule.grid();

    let mut adam = AdamW::from_config(model.params.len(), config);
    let mut ema = Ema::new(config.ema_beta, config.ema_power);
    let mut order_rng = rng::stream(config.seed, "order");
    let mut noise_rng = rng::stream(config.seed, "noise");
    let mut sigma_rng = rng::stream(config.seed, "sigma");

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut epoch_costs = (0.0, 0usize);
    let mut assignment_costs = Vec::new();
    let mut curve = Vec::with_capacity(config.steps);
    let mut grads = vec![0.0; model.params.len()];
    let start = Instant::now();

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
                if epoch_costs.1 > 0 {
                    assignment_costs.push(epoch_costs.0 / epoch_costs.1 as f64);
                    epoch_costs = (0.0, 0);
                }
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let mut noise: Vec<LatentClip> = (0..batch.len())
            .map(|_| standard_normal_clip(channels, frames, &mut noise_rng))
            .collect();
        if config.coupling.enabled {
            let table = coupling::ot_pair(&batch, &noise, &config.coupling)?;
            noise = table.apply(&noise)?;
            epoch_costs.0 += table.total_cost() / batch.len() as f64;
            epoch_costs.1 += 1;
        }
        let sigmas: Vec<f64> = (0..batch.len())
            .map(|_| grid[sigma_rng.random_range(0..grid.len())])
            .collect();

        grads.iter_mut().for_each(|g| *g = 0.0);
        let loss = batch_loss(arch, &model.params, schedule.sigma_data, &batch, &noise, &sigmas, Some(&mut grads))?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "loss became non-finite at step {step} (last finite loss {:?})",
                curve.last()
            )));
        }
        curve.push(loss);
        adam.step(&mut model.params, &grads);
        ema.update(&mut model.ema, &model.params);
        if step % 500 == 0 {
            log::debug!("step {step}: loss {loss:.5}");
        }
    }
    if epoch_costs.1 > 0 {
        assignment_costs.push(epoch_costs.0 / epoch_costs.1 as f64);
    }

    let tail = &curve[curve.len().saturating_sub(50)..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let report = TrainingReport {
        final_loss,
        epochs: (config.steps * config.batch_size) as f64 / dataset.len() as f64,
        loss_curve: curve,
        wall_seconds: start.elapsed().as_secs_f64(),
        assignment_costs,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::loss_weight;

    fn tiny_arch() -> Architecture {
        Architecture {
            channels: 2,
            base: 2,
            mid: 3,
            kernel: 3,
            noise_features: 4,
        }
    }

    fn random_clip<R: Rng>(r: &mut R, c: usize, t: usize) -> LatentClip {
        LatentClip::new(c, t, (0..c * t).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = tiny_arch();
        assert!(arch.param_count() <= 200);
        let params = crate::denoiser::init_params(&arch, 21);
        let mut r = rng::stream(22, "fd");
        let x0: Vec<LatentClip> = (0..3).map(|_| random_clip(&mut r, 2, 8)).collect();
        let refs: Vec<&LatentClip> = x0.iter().collect();
        let noise: Vec<LatentClip> = (0..3).map(|_| standard_normal_clip(2, 8, &mut r)).collect();
        let sigmas = [0.05, 0.9, 12.0];
        let mut grads = vec![0.0; params.len()];
        batch_loss(arch, &params, 1.0, &refs, &noise, &sigmas, Some(&mut grads)).unwrap();

        let h = 1e-4;
        for spec in arch.layout() {
            let mut worst: f64 = 0.0;
            for i in spec.range() {
                let mut p = params.clone();
                p[i] = params[i] + h;
                let up = batch_loss(arch, &p, 1.0, &refs, &noise, &sigmas, None).unwrap();
                p[i] = params[i] - h;
                let down = batch_loss(arch, &p, 1.0, &refs, &noise, &sigmas, None).unwrap();
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "{}: relative error {worst}", spec.name);
        }
    }

    #[test]
    fn zero_network_loss_is_skip_residual() {
        let arch = tiny_arch();
        let params = vec![0.0; arch.param_count()];
        let mut r = rng::stream(5, "zero");
        let x0: Vec<LatentClip> = (0..4).map(|_| random_clip(&mut r, 2, 8)).collect();
        let refs: Vec<&LatentClip> = x0.iter().collect();
        let noise: Vec<LatentClip> = (0..4).map(|_| standard_normal_clip(2, 8, &mut r)).collect();
        let sigmas = [0.01, 0.3, 2.0, 80.0];
        let got = batch_loss(arch, &params, 1.0, &refs, &noise, &sigmas, None).unwrap();

        let mut want = 0.0;
        for j in 0..4 {
            let c = precond(sigmas[j], 1.0).unwrap();
            let lam = loss_weight(sigmas[j], 1.0).unwrap();
            let mse: f64 = x0[j]
                .data()
                .iter()
                .zip(noise[j].data())
                .map(|(a, e)| {
                    let x = a + sigmas[j] * e;
                    (a - c.c_skip * x).powi(2)
                })
                .sum::<f64>()
                / 16.0;
            want += lam * mse / 4.0;
        }
        assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn ema_tracks_raw_weights_when_beta_vanishes() {
        let mut ema = Ema::new(1e-6, 0.7);
        let mut e = vec![1.0, -2.0, 3.0];
        let p = vec![0.5, 0.25, -1.0];
        ema.update(&mut e, &p);
        ema.update(&mut e, &p);
        for (a, b) in e.iter().zip(&p) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ema_warmup_ramps_to_beta() {
        assert_eq!(ema_decay(0.995, 0.7, 0), 0.0);
        let mut prev = 0.0;
        for t in 1..10_000 {
            let d = ema_decay(0.995, 0.7, t);
            assert!(d > prev && d < 0.995);
            prev = d;
        }
        assert!(ema_decay(0.995, 0.7, 10_000_000) > 0.994);
    }

    #[test]
    fn adamw_first_step_is_sign_step_plus_decay() {
        let mut opt = AdamW::new(2, 0.1, 0.9, 0.999, 1e-12, 0.01);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - (1.0 - 0.1 * (0.01 + 1.0))).abs() < 1e-9);
        assert!((p[1] - (-1.0 - 0.1 * (-0.01 - 1.0))).abs() < 1e-9);
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let err = train(&[], &ChannelStats::identity(2), ScheduleParams::default(), &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
