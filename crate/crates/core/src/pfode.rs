//! Deterministic probability-flow ODE solvers over the noise grid.
//!
//! The state evolves as `dx/dsigma = (x - D(x; sigma)) / sigma`, integrated in
//! `sigma` itself over nodes of the schedule grid. Forward solves climb the grid
//! (data to noise); reverse solves walk the same nodes in descending order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Heun,
    Rk4,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Euler, Method::Heun, Method::Rk4];

    /// Convergence order.
    pub fn order(self) -> u32 {
        match self {
            Method::Euler => 1,
            Method::Heun => 2,
            Method::Rk4 => 4,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Heun => "heun",
            Method::Rk4 => "rk4",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "heun" => Ok(Method::Heun),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::config("solver", format!("unknown solver '{other}' (euler|heun|rk4)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Ascending sigma, data to noise.
    Forward,
    /// Descending sigma, noise to data.
    Reverse,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::config("direction", format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub method: Method,
    pub schedule: ScheduleParams,
    pub direction: Direction,
    pub start_index: usize,
    pub end_index: usize,
    /// Append a final step to `sigma = 0` after a reverse solve reaching index 0.
    pub terminal_zero: bool,
}

impl SolverSpec {
    /// Climb from `from` to `to` (`from <= to`).
    pub fn forward(method: Method, schedule: ScheduleParams, from: usize, to: usize) -> Self {
        Self {
            method,
            schedule,
            direction: Direction::Forward,
            start_index: from,
            end_index: to,
            terminal_zero: false,
        }
    }

    /// Descend from `from` to `to` (`from >= to`).
    pub fn reverse(method: Method, schedule: ScheduleParams, from: usize, to: usize) -> Self {
        Self {
            method,
            schedule,
            direction: Direction::Reverse,
            start_index: from,
            end_index: to,
            terminal_zero: false,
        }
    }

    /// The noise levels visited, in integration order.
    pub fn sigmas(&self) -> Result<Vec<f64>> {
        self.schedule.validate()?;
        let n = self.schedule.n_steps;
        if self.start_index >= n || self.end_index >= n {
            return Err(Error::Contract(format!(
                "solver indices {}..{} outside grid of {n}",
                self.start_index, self.end_index
            )));
        }
        let grid = self.schedule.grid();
        let mut path: Vec<f64> = match self.direction {
            Direction::Forward => {
                if self.start_index > self.end_index {
                    return Err(Error::Contract("forward solve must not descend the grid".into()));
                }
                grid[self.start_index..=self.end_index].to_vec()
            }
            Direction::Reverse => {
                if self.start_index < self.end_index {
                    return Err(Error::Contract("reverse solve must not climb the grid".into()));
                }
                grid[self.end_index..=self.start_index].iter().rev().copied().collect()
            }
        };
        if self.terminal_zero {
            if self.direction != Direction::Reverse || self.end_index != 0 {
                return Err(Error::Contract("a terminal sigma = 0 step only ends a reverse solve at index 0".into()));
            }
            path.push(0.0);
        }
        Ok(path)
    }

    /// Largest `|sigma_{i+1} - sigma_i|` traversed.
    pub fn max_step(&self) -> Result<f64> {
        Ok(self
            .sigmas()?
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max))
    }
}

fn slope<D: Denoiser + ?Sized>(model: &D, x: &LatentClip, sigma: f64, step: usize) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Err(Error::Domain(format!("slope evaluated at sigma = 0 in step {step}")));
    }
    let d = model.denoise(x, sigma)?;
    Ok(x.data().iter().zip(d.data()).map(|(a, b)| (a - b) / sigma).collect())
}

fn offset(x: &LatentClip, h: f64, d: &[f64]) -> LatentClip {
    x.map_data(x.data().iter().zip(d).map(|(a, b)| a + h * b).collect())
}

fn check(x: &LatentClip, step: usize) -> Result<()> {
    if x.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            msg: "state became non-finite".into(),
        })
    }
}

/// Integrates along an explicit noise-level path.
pub fn solve_path<D: Denoiser + ?Sized>(x: &LatentClip, model: &D, method: Method, sigmas: &[f64]) -> Result<LatentClip> {
    if let Some((c, t)) = model.shape() {
        x.ensure_shape(c, t)?;
    }
    let mut state = x.clone();
    for (step, w) in sigmas.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        state = match method {
            Method::Euler => offset(&state, h, &slope(model, &state, a, step)?),
            Method::Heun => {
                let d = slope(model, &state, a, step)?;
                let euler = offset(&state, h, &d);
                if b != 0.0 {
                    check(&euler, step)?;
                    let d_hat = slope(model, &euler, b, step)?;
                    let avg: Vec<f64> = d.iter().zip(&d_hat).map(|(p, q)| 0.5 * p + 0.5 * q).collect();
                    offset(&state, h, &avg)
                } else {
                    euler
                }
            }
            Method::Rk4 => {
                let mid = 0.5 * (a + b);
                let k1 = slope(model, &state, a, step)?;
                let k2 = slope(model, &offset(&state, 0.5 * h, &k1), mid, step)?;
                let k3 = slope(model, &offset(&state, 0.5 * h, &k2), mid, step)?;
                let k4 = slope(model, &offset(&state, h, &k3), b, step)?;
                let comb: Vec<f64> = (0..k1.len())
                    .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                    .collect();
                offset(&state, h, &comb)
            }
        };
        check(&state, step)?;
    }
    Ok(state)
}

/// Solves the probability-flow ODE over the grid segment described by `spec`.
pub fn ode_solve<D: Denoiser + ?Sized>(x: &LatentClip, model: &D, spec: &SolverSpec) -> Result<LatentClip> {
    let path = spec.sigmas()?;
    solve_path(x, model, spec.method, &path)
}

/// One row of a step-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub n_steps: usize,
    pub h: f64,
    pub mean_l2: f64,
}

/// Endpoint errors of several methods and grid sizes against a fine reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub reference_steps: usize,
    /// Least-squares slope of `ln(mean_l2)` against `ln(h)` per method, over all points.
    pub slopes: Vec<(Method, f64)>,
    /// Same fit over the coarser half of the step counts (at least three points).
    pub coarse_slopes: Vec<(Method, f64)>,
}

impl SweepTable {
    pub fn slope(&self, m: Method) -> Option<f64> {
        self.slopes.iter().find(|(k, _)| *k == m).map(|(_, s)| *s)
    }

    pub fn coarse_slope(&self, m: Method) -> Option<f64> {
        self.coarse_slopes.iter().find(|(k, _)| *k == m).map(|(_, s)| *s)
    }

    /// CSV with columns `method,n_steps,h,mean_l2,slope`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "n_steps", "h", "mean_l2", "slope"])?;
        for r in &self.rows {
            let slope = self.slope(r.method).map(|s| format!("{s}")).unwrap_or_default();
            out.write_record([
                r.method.to_string(),
                r.n_steps.to_string(),
                format!("{}", r.h),
                format!("{}", r.mean_l2),
                slope,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `ln y` against `ln x`. Requires at least three
/// points spanning a factor of four in `x`.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Data("a slope fit needs at least three points".into()));
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    if hi < 4.0 * lo {
        return Err(Error::Data("slope fit points must span at least 4x in step size".into()));
    }
    if ys.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::Data("slope fit needs positive errors".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// Generic sweep: `run(x, method, n)` maps one start point through a solve on an
/// `n`-point grid. The reference is Heun on `reference_steps` points.
pub fn sweep_with<F>(x_batch: &[LatentClip], methods: &[Method], step_counts: &[usize], reference_steps: usize, schedule: &ScheduleParams, run: F) -> Result<SweepTable>
where
    F: Fn(&LatentClip, Method, usize) -> Result<LatentClip>,
{
    if step_counts.len() < 3 {
        return Err(Error::Data("slope fit refused: fewer than 3 step counts".into()));
    }
    if x_batch.is_empty() {
        return Err(Error::Data("sweep needs at least one start point".into()));
    }
    let max_n = *step_counts.iter().max().unwrap();
    if reference_steps < 32 * max_n {
        return Err(Error::config(
            "reference_steps",
            format!("reference grid {reference_steps} must be at least 32x the largest tested grid ({max_n})"),
        ));
    }
    let reference: Vec<LatentClip> = x_batch
        .iter()
        .map(|x| run(x, Method::Heun, reference_steps))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut coarse_slopes = Vec::new();
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    for &m in methods {
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for &n in &counts {
            let h = schedule.with_steps(n)?.max_spacing(0, n - 1);
            let mut total = 0.0;
            for (x, r) in x_batch.iter().zip(&reference) {
                total += run(x, m, n)?.distance(r);
            }
            let mean_l2 = total / x_batch.len() as f64;
            rows.push(SweepRow {
                method: m,
                n_steps: n,
                h,
                mean_l2,
            });
            hs.push(h);
            errs.push(mean_l2);
        }
        slopes.push((m, fit_log_slope(&hs, &errs)?));
        let half = counts.len().div_ceil(2).max(3);
        coarse_slopes.push((m, fit_log_slope(&hs[..half], &errs[..half])?));
    }
    Ok(SweepTable {
        rows,
        reference_steps,
        slopes,
        coarse_slopes,
    })
}

/// Forward-solve sweep over the full grid `sigma_min -> sigma_max` for each
/// `N` in `step_counts`, against a Heun reference on `32 x max(N)` points.
pub fn step_count_sweep<D: Denoiser + ?Sized>(x_batch: &[LatentClip], model: &D, schedule: &ScheduleParams, methods: &[Method], step_counts: &[usize]) -> Result<SweepTable> {
    let reference = 32 * step_counts.iter().copied().max().unwrap_or(0);
    sweep_with(x_batch, methods, step_counts, reference, schedule, |x, m, n| {
        let s = schedule.with_steps(n)?;
        ode_solve(x, model, &SolverSpec::forward(m, s, 0, n - 1))
    })
}
