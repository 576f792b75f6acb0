use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::StudyOutput;
use crate::bridge::{transfer, BridgeConfig};
use crate::clip::LatentClip;
use crate::denoiser::GaussianMixture;
use crate::error::{Error, Result};
use crate::metrics::{energy_distance, histogram_tv, HistogramGrid};
use crate::pfode::{fit_log_slope, Method};
use crate::rng;
use crate::schedule::ScheduleParams;

/// Two analytic domains for solver and theorem checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPair {
    pub source: GaussianMixture,
    pub target: GaussianMixture,
}

impl GmmPair {
    /// Two elongated mixtures in the plane, one the transpose of the other.
    pub fn standard() -> Self {
        let narrow = |horizontal: bool| {
            let (m, v) = if horizontal {
                ([[-2.5, 0.0], [2.5, 0.0]], [0.05, 5.0])
            } else {
                ([[0.0, -2.5], [0.0, 2.5]], [5.0, 0.05])
            };
            GaussianMixture::new(
                vec![0.5, 0.5],
                m.iter().map(|p| p.to_vec()).collect(),
                vec![v.to_vec(), v.to_vec()],
            )
            .expect("valid mixture")
        };
        Self {
            source: narrow(false),
            target: narrow(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub methods: Vec<Method>,
    pub step_counts: Vec<usize>,
    /// Samples transferred for the distributional distance.
    pub n_samples: usize,
    /// Leading samples used for the endpoint error.
    pub l2_samples: usize,
    /// Reference grid; `None` uses 32 times the largest tested grid.
    pub reference_steps: Option<usize>,
    /// Fresh target draws the transferred cloud is compared with.
    pub reference_draws: usize,
    pub bins: usize,
    pub schedule: ScheduleParams,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            step_counts: vec![10, 20, 40, 80, 160],
            n_samples: 20_000,
            l2_samples: 200,
            reference_steps: None,
            reference_draws: 100_000,
            bins: 64,
            schedule: ScheduleParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n_steps: usize,
    /// Largest grid spacing traversed.
    pub h: f64,
    pub mean_l2: f64,
    /// Histogram TV in two dimensions, energy distance otherwise.
    pub distance: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub method: Method,
    pub order: u32,
    pub points: Vec<ConvergencePoint>,
    /// Log-log slope of endpoint error against `h` over all points.
    pub slope: Option<f64>,
    /// Same over the coarser half of the grids.
    pub coarse_slope: Option<f64>,
    pub reference_steps: usize,
}

impl ConvergenceResult {
    pub fn point(&self, n_steps: usize) -> Option<&ConvergencePoint> {
        self.points.iter().find(|p| p.n_steps == n_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceConfig,
    pub results: Vec<ConvergenceResult>,
    /// `"tv"` or `"energy"`.
    pub distance_kind: String,
    /// Distance between an independent fresh target cloud and the reference
    /// cloud: the sampling-noise floor.
    pub floor: f64,
}

impl ConvergenceReport {
    pub fn result(&self, m: Method) -> Option<&ConvergenceResult> {
        self.results.iter().find(|r| r.method == m)
    }

}

impl StudyOutput for ConvergenceReport {
    fn name(&self) -> &str {
        "convergence"
    }

    /// Columns `method,order,n_steps,h,mean_l2,distance,slope,coarse_slope`.
    fn write_csv(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "order", "n_steps", "h", "mean_l2", "distance", "slope", "coarse_slope"])?;
        let opt = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
        for r in &self.results {
            for p in &r.points {
                out.write_record([
                    r.method.to_string(),
                    r.order.to_string(),
                    p.n_steps.to_string(),
                    p.h.to_string(),
                    p.mean_l2.to_string(),
                    p.distance.to_string(),
                    opt(r.slope),
                    opt(r.coarse_slope),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn summary(&self) -> String {
        let mut s = format!(
            "convergence study: {} samples, reference N={}, {} floor {:.4}\n",
            self.config.n_samples,
            self.results.first().map_or(0, |r| r.reference_steps),
            self.distance_kind,
            self.floor
        );
        for r in &self.results {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            s += &format!("  {:<5} order {}  slope {}  coarse {}\n", r.method, r.order, f(r.slope), f(r.coarse_slope));
            for p in &r.points {
                s += &format!(
                    "    N={:<4} h={:<10.4} l2={:<12.4e} {}={:.4}\n",
                    p.n_steps, p.h, p.mean_l2, self.distance_kind, p.distance
                );
            }
        }
        s
    }
}

fn slope_of(points: &[ConvergencePoint]) -> Option<f64> {
    let hs: Vec<f64> = points.iter().map(|p| p.h).collect();
    let es: Vec<f64> = points.iter().map(|p| p.mean_l2).collect();
    fit_log_slope(&hs, &es).ok()
}

/// Transfers source draws through the pair at several grid sizes, measuring
/// endpoint error against a fine Heun reference and distance to the target.
pub fn convergence_study(pair: &GmmPair, config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let dim = pair.source.dim();
    if pair.target.dim() != dim {
        return Err(Error::config("gmm", "source and target dimensions differ"));
    }
    if config.step_counts.len() < 3 {
        return Err(Error::config("step_counts", "slope fits need at least 3 grids"));
    }
    if config.n_samples == 0 || config.l2_samples == 0 {
        return Err(Error::config("n_samples", "must be positive"));
    }
    let max_n = *config.step_counts.iter().max().unwrap();
    let reference_steps = config.reference_steps.unwrap_or(32 * max_n);
    if reference_steps < 32 * max_n {
        return Err(Error::config("reference_steps", "must be at least 32x the largest grid"));
    }
    let mut r = rng::stream(config.seed, "convergence/source");
    let xs: Vec<LatentClip> = pair
        .source
        .sample_n(config.n_samples, &mut r)
        .into_iter()
        .map(|p| LatentClip::from_point(&p))
        .collect::<Result<_>>()?;
    let n_l2 = config.l2_samples.min(xs.len());
    let bridge_at = |n: usize, m: Method| -> Result<(ScheduleParams, Method)> { Ok((config.schedule.with_steps(n)?, m)) };
    let run = |n: usize, m: Method, x: &LatentClip| -> Result<LatentClip> {
        let (s, m) = bridge_at(n, m)?;
        let b = BridgeConfig::new(&pair.source, &pair.target, s, s.sigma_max, m, true)?;
        transfer(x, &b).map_err(|e| match e {
            Error::Divergence { step, msg } => Error::Divergence {
                step,
                msg: format!("{m} on N={n}: {msg}"),
            },
            other => other,
        })
    };
    let reference: Vec<LatentClip> = xs[..n_l2]
        .iter()
        .map(|x| run(reference_steps, Method::Heun, x))
        .collect::<Result<_>>()?;

    let mut rr = rng::stream(config.seed, "convergence/reference");
    let target_ref = pair.target.sample_n(config.reference_draws, &mut rr);
    let fresh = pair.target.sample_n(config.n_samples, &mut rr);
    let (kind, distance): (&str, Box<dyn Fn(&[Vec<f64>]) -> Result<f64>>) = if dim == 2 {
        let mean = pair.target.mean();
        let std = pair.target.axis_std();
        let grid = HistogramGrid::around([mean[0], mean[1]], [4.0 * std[0], 4.0 * std[1]], config.bins);
        let reference = target_ref.clone();
        ("tv", Box::new(move |pts: &[Vec<f64>]| histogram_tv(pts, &reference, &grid)))
    } else {
        let reference: Vec<Vec<f64>> = target_ref.iter().take(2000).cloned().collect();
        ("energy", Box::new(move |pts: &[Vec<f64>]| energy_distance(&pts[..pts.len().min(2000)], &reference)))
    };
    let floor = distance(&fresh)?;

    let mut results = Vec::new();
    for &m in &config.methods {
        let mut points = Vec::new();
        let mut counts = config.step_counts.clone();
        counts.sort_unstable();
        for &n in &counts {
            let start = Instant::now();
            let out: Vec<LatentClip> = xs.iter().map(|x| run(n, m, x)).collect::<Result<_>>()?;
            let seconds = start.elapsed().as_secs_f64();
            let mean_l2 = out[..n_l2].iter().zip(&reference).map(|(a, b)| a.distance(b)).sum::<f64>() / n_l2 as f64;
            let pts: Vec<Vec<f64>> = out.iter().map(|c| c.data().to_vec()).collect();
            points.push(ConvergencePoint {
                n_steps: n,
                h: config.schedule.with_steps(n)?.max_spacing(0, n - 1),
                mean_l2,
                distance: distance(&pts)?,
                seconds,
            });
            log::info!("convergence {m} N={n}: l2 {mean_l2:.3e}");
        }
        let half = points.len().div_ceil(2).max(3).min(points.len());
        results.push(ConvergenceResult {
            method: m,
            order: m.order(),
            slope: slope_of(&points),
            coarse_slope: slope_of(&points[..half]),
            points,
            reference_steps,
        });
    }
    Ok(ConvergenceReport {
        config: config.clone(),
        results,
        distance_kind: kind.to_string(),
        floor,
    })
}
