//! Closed-form posterior-mean denoiser for diagonal Gaussian mixtures.
//!
//! Under `x = x0 + sigma * eps` with `x0 ~ sum_k w_k N(mu_k, diag(v_k))`, the
//! minimum-MSE denoiser is the posterior mean. It is exact, which makes it the
//! reference against which solvers and bridges are measured.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::clip::LatentClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Contract("mixture needs K weights, means and variances".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::Contract("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Domain("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("mixture variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single Gaussian `N(mean, diag(var))`.
    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![var])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.weights.iter().zip(&self.means).map(|(w, m)| w * m[j]).sum())
            .collect()
    }

    /// Per-axis standard deviation of the mixture.
    pub fn axis_std(&self) -> Vec<f64> {
        let mu = self.mean();
        (0..self.dim())
            .map(|j| {
                let second: f64 = self
                    .weights
                    .iter()
                    .zip(self.means.iter().zip(&self.variances))
                    .map(|(w, (m, v))| w * (v[j] + m[j] * m[j]))
                    .sum();
                (second - mu[j] * mu[j]).sqrt()
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Log-weights `ln w_k + ln N(x; mu_k, v_k + sigma^2)` of every component.
    fn log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| {
                let mut lp = w.ln();
                for j in 0..x.len() {
                    let var = v[j] + s2;
                    let d = x[j] - m[j];
                    lp -= 0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln());
                }
                lp
            })
            .collect()
    }

    /// Posterior responsibilities under the noisy mixture (log-sum-exp stabilized).
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let lt = self.log_terms(x, sigma);
        let max = lt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = lt.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// `ln p_sigma(x)` of the mixture convolved with `N(0, sigma^2 I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> f64 {
        let lt = self.log_terms(x, sigma);
        let max = lt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + lt.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// Posterior mean `E[x0 | x]` at noise level `sigma > 0`.
    pub fn analytic_denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("analytic denoiser needs sigma > 0, got {sigma}")));
        }
        if x.len() != self.dim() {
            return Err(Error::Contract(format!(
                "point has dimension {}, mixture {}",
                x.len(),
                self.dim()
            )));
        }
        let r = self.responsibilities(x, sigma);
        let s2 = sigma * sigma;
        let mut out = vec![0.0; x.len()];
        for (rk, (m, v)) in r.iter().zip(self.means.iter().zip(&self.variances)) {
            for j in 0..x.len() {
                out[j] += rk * (m[j] + v[j] / (v[j] + s2) * (x[j] - m[j]));
            }
        }
        Ok(out)
    }
}

impl Denoiser for GaussianMixture {
    fn shape(&self) -> Option<(usize, usize)> {
        Some((self.dim(), 1))
    }

    fn denoise(&self, x: &LatentClip, sigma: f64) -> Result<LatentClip> {
        x.ensure_shape(self.dim(), 1)?;
        let out = self.analytic_denoise(x.data(), sigma)?;
        Ok(x.map_data(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn two_bumps() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![1.0, -0.5], vec![-2.0, 1.5]],
            vec![vec![0.4, 0.9], vec![1.3, 0.2]],
        )
        .unwrap()
    }

    #[test]
    fn unit_gaussian_posterior_mean() {
        let g = GaussianMixture::single(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let out = g.analytic_denoise(&[2.0, 0.0], 1.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
        assert!(matches!(g.analytic_denoise(&[0.0, 0.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn posterior_mean_matches_monte_carlo() {
        // E[x0 | x] = E[x0 N(x; x0, s^2)] / E[N(x; x0, s^2)] with x0 ~ prior.
        let g = GaussianMixture::single(vec![0.0], vec![1.0]).unwrap();
        let mut r = rng::stream(11, "mc");
        let (x, sigma) = (2.0, 1.0);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..1_000_000 {
            let x0 = g.sample(&mut r)[0];
            let w = (-(x - x0) * (x - x0) / (2.0 * sigma * sigma)).exp();
            num += x0 * w;
            den += w;
        }
        let exact = g.analytic_denoise(&[x], sigma).unwrap()[0];
        assert!((num / den - exact).abs() < 5e-3, "mc {} vs {}", num / den, exact);
    }

    #[test]
    fn symmetric_mixture_maps_origin_to_origin() {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![2.0, 1.0], vec![-2.0, -1.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .unwrap();
        for sigma in [0.1, 1.0, 10.0] {
            let out = g.analytic_denoise(&[0.0, 0.0], sigma).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn tiny_sigma_recovers_component_mean() {
        let g = two_bumps();
        for m in g.means() {
            let out = g.analytic_denoise(m, 1e-4).unwrap();
            for (a, b) in out.iter().zip(m) {
                assert!((a - b).abs() < 1e-3);
            }
        }
    }

    /// Gradient of `ln(sum_k w_k N(x; mu_k, v_k + s^2))` written out without
    /// log-sum-exp, for K = 2 and d = 2.
    fn symbolic_score(g: &GaussianMixture, x: &[f64], sigma: f64) -> [f64; 2] {
        let s2 = sigma * sigma;
        let mut dens = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for k in 0..2 {
            let (m, v) = (&g.means()[k], &g.variances()[k]);
            let va = v[0] + s2;
            let vb = v[1] + s2;
            let q = (x[0] - m[0]).powi(2) / va + (x[1] - m[1]).powi(2) / vb;
            let n = g.weights()[k] * (-0.5 * q).exp()
                / (2.0 * std::f64::consts::PI * (va * vb).sqrt());
            dens[k] = n;
            grad[k] = [-n * (x[0] - m[0]) / va, -n * (x[1] - m[1]) / vb];
        }
        let p = dens[0] + dens[1];
        [(grad[0][0] + grad[1][0]) / p, (grad[0][1] + grad[1][1]) / p]
    }

    proptest! {
        #[test]
        fn tweedie_score_identity(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, sigma in 0.2f64..5.0) {
            let g = two_bumps();
            let x = [x0, x1];
            let d = g.analytic_denoise(&x, sigma).unwrap();
            let sym = symbolic_score(&g, &x, sigma);
            for j in 0..2 {
                let tweedie = (d[j] - x[j]) / (sigma * sigma);
                let scale = sym[j].abs().max(1e-3);
                prop_assert!(((tweedie - sym[j]) / scale).abs() < 1e-8,
                    "axis {}: {} vs {}", j, tweedie, sym[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }
}
