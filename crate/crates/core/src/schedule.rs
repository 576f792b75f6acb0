//! Warped noise-level grid and the denoiser preconditioning coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the ascending noise grid
/// `sigma_i = (sigma_min^(1/rho) + i/(N-1) (sigma_max^(1/rho) - sigma_min^(1/rho)))^rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_steps: usize,
    pub sigma_data: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 100.0,
            rho: 9.0,
            n_steps: 100,
            sigma_data: 1.0,
        }
    }
}

impl ScheduleParams {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64, n_steps: usize, sigma_data: f64) -> Result<Self> {
        let p = Self {
            sigma_min,
            sigma_max,
            rho,
            n_steps,
            sigma_data,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same schedule with a different grid size.
    pub fn with_steps(self, n_steps: usize) -> Result<Self> {
        Self::new(self.sigma_min, self.sigma_max, self.rho, n_steps, self.sigma_data)
    }

    pub fn with_sigma_max(self, sigma_max: f64) -> Result<Self> {
        Self::new(self.sigma_min, sigma_max, self.rho, self.n_steps, self.sigma_data)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(Error::config("sigma_min", "must be a positive finite number"));
        }
        if !(self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::config("sigma_max", "must exceed sigma_min"));
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return Err(Error::config("rho", "must be at least 1"));
        }
        if self.n_steps < 2 {
            return Err(Error::config("steps", "grid needs at least 2 points"));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        Ok(())
    }

    /// Noise level at grid index `i`. The endpoints are returned exactly.
    pub fn sigma_at(&self, i: usize) -> Result<f64> {
        let n = self.n_steps;
        if i >= n {
            return Err(Error::Contract(format!("grid index {i} outside [0, {}]", n - 1)));
        }
        if i == 0 {
            return Ok(self.sigma_min);
        }
        if i == n - 1 {
            return Ok(self.sigma_max);
        }
        let inv = 1.0 / self.rho;
        let lo = self.sigma_min.powf(inv);
        let hi = self.sigma_max.powf(inv);
        let frac = i as f64 / (n - 1) as f64;
        Ok((lo + frac * (hi - lo)).powf(self.rho))
    }

    /// The whole ascending grid.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_steps)
            .map(|i| self.sigma_at(i).expect("index in range"))
            .collect()
    }

    /// Largest spacing between adjacent nodes of `grid[lo..=hi]`.
    pub fn max_spacing(&self, lo: usize, hi: usize) -> f64 {
        let g = self.grid();
        g[lo..=hi]
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the grid node nearest to `sigma` (in absolute distance).
    pub fn nearest_index(&self, sigma: f64) -> usize {
        let g = self.grid();
        let mut best = 0;
        for (i, s) in g.iter().enumerate() {
            if (s - sigma).abs() < (g[best] - sigma).abs() {
                best = i;
            }
        }
        best
    }
}

/// Preconditioning coefficients at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    /// `ln(sigma)/4`; absent at `sigma == 0`.
    pub c_noise: Option<f64>,
}

impl PrecondCoeffs {
    /// `c_noise`, failing at zero noise where the log diverges.
    pub fn noise(&self) -> Result<f64> {
        self.c_noise
            .ok_or_else(|| Error::Domain("c_noise is undefined at sigma = 0".into()))
    }
}

pub fn precond(sigma: f64, sigma_data: f64) -> Result<PrecondCoeffs> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if !(sigma_data > 0.0) {
        return Err(Error::Domain(format!("sigma_data must be > 0, got {sigma_data}")));
    }
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let root = (s2 + d2).sqrt();
    Ok(PrecondCoeffs {
        c_skip: d2 / (s2 + d2),
        c_out: sigma * sigma_data / root,
        c_in: 1.0 / root,
        c_noise: (sigma > 0.0).then(|| sigma.ln() / 4.0),
    })
}

/// Training loss weight `1 / c_out(sigma)^2`.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Domain("loss weight diverges at sigma = 0".into()));
    }
    let c = precond(sigma, sigma_data)?;
    Ok(1.0 / (c.c_out * c.c_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_grid() -> ScheduleParams {
        ScheduleParams::new(0.01, 100.0, 9.0, 100, 1.0).unwrap()
    }

    // 50-digit evaluation of the grid formula.
    const SIGMA_50: f64 = 3.231_198_021_208_478_4;
    const SIGMA_1: f64 = 0.011_742_260_134_147_403;
    const SIGMA_98: f64 = 94.324_681_137_401_3;

    #[test]
    fn endpoints_and_interior_values() {
        let p = reference_grid();
        assert_eq!(p.sigma_at(0).unwrap(), 0.01);
        assert_eq!(p.sigma_at(99).unwrap(), 100.0);
        for (i, want) in [(50, SIGMA_50), (1, SIGMA_1), (98, SIGMA_98)] {
            let got = p.sigma_at(i).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "i={i}: {got} vs {want}");
        }
        assert!(matches!(p.sigma_at(100), Err(Error::Contract(_))));
    }

    #[test]
    fn rho_one_is_arithmetic() {
        let p = ScheduleParams::new(0.5, 10.5, 1.0, 11, 1.0).unwrap();
        for (i, s) in p.grid().iter().enumerate() {
            assert!((s - (0.5 + i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_params_name_their_key() {
        let err = ScheduleParams::new(0.01, 0.001, 9.0, 100, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "sigma_max"));
        assert!(ScheduleParams::new(0.01, 1.0, 9.0, 1, 1.0).is_err());
        assert!(ScheduleParams::new(0.01, 1.0, 0.5, 10, 1.0).is_err());
    }

    #[test]
    fn precond_examples() {
        let c = precond(0.0, 1.0).unwrap();
        assert_eq!((c.c_skip, c.c_out, c.c_in), (1.0, 0.0, 1.0));
        assert!(c.noise().is_err());

        let c = precond(1.0, 1.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.c_skip - 0.5).abs() < 1e-15);
        assert!((c.c_out - r).abs() < 1e-15);
        assert!((c.c_in - r).abs() < 1e-15);
        assert_eq!(c.noise().unwrap(), 0.0);

        let c = precond(100.0, 1.0).unwrap();
        assert!((c.c_skip - 1.0 / 10001.0).abs() < 1e-18);
    }

    #[test]
    fn loss_weight_examples() {
        assert!((loss_weight(1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(loss_weight(0.0, 1.0), Err(Error::Domain(_))));
        // (sigma^2 + 1) / sigma^2 at sigma = 0.01
        assert!((loss_weight(0.01, 1.0).unwrap() - 10001.0).abs() / 10001.0 < 1e-12);
    }

    #[test]
    fn precond_identity() {
        for sigma in [0.01, 0.1, 1.0, 10.0, 100.0] {
            for sd in [0.5, 1.0, 2.0] {
                let c = precond(sigma, sd).unwrap();
                let lhs = c.c_skip * c.c_skip * (sigma * sigma + sd * sd) + c.c_out * c.c_out;
                assert!(((lhs - sd * sd) / (sd * sd)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn grid_is_strictly_increasing(
            smin in 1e-3f64..1.0,
            ratio in 1.5f64..1e4,
            rho in 1.0f64..12.0,
            n in 2usize..300,
        ) {
            let p = ScheduleParams::new(smin, smin * ratio, rho, n, 1.0).unwrap();
            let g = p.grid();
            prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(g[0], smin);
            prop_assert_eq!(g[n - 1], smin * ratio);
        }

        #[test]
        fn coefficient_ranges(sigma in 0.0f64..1e3, sd in 0.1f64..10.0) {
            let c = precond(sigma, sd).unwrap();
            prop_assert!(c.c_skip > 0.0 && c.c_skip <= 1.0);
            prop_assert!(c.c_in > 0.0 && c.c_in <= 1.0 / sd + 1e-15);
            prop_assert!(c.c_out >= 0.0);
        }
    }
}
