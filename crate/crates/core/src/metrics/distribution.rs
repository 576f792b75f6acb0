//! Sample-cloud distances for low-dimensional oracle studies.

use crate::error::{Error, Result};

/// Axis-aligned box split into `bins x bins` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramGrid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub bins: usize,
}

impl HistogramGrid {
    /// Box of `centre +- half_width` per axis.
    pub fn around(centre: [f64; 2], half_width: [f64; 2], bins: usize) -> Self {
        Self {
            lo: [centre[0] - half_width[0], centre[1] - half_width[1]],
            hi: [centre[0] + half_width[0], centre[1] + half_width[1]],
            bins,
        }
    }

    fn cell(&self, p: &[f64]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for k in 0..2 {
            let u = (p[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
            if !(0.0..1.0).contains(&u) {
                return None;
            }
            idx[k] = ((u * self.bins as f64) as usize).min(self.bins - 1);
        }
        Some(idx[0] * self.bins + idx[1])
    }

    /// Normalized counts; mass outside the box is pooled in one extra cell.
    pub fn histogram(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Data("histogram of an empty sample".into()));
        }
        if points.iter().any(|p| p.len() != 2) {
            return Err(Error::Contract("histogram TV is defined for 2-D samples only".into()));
        }
        let n = self.bins * self.bins;
        let mut h = vec![0.0; n + 1];
        for p in points {
            h[self.cell(p).unwrap_or(n)] += 1.0;
        }
        let total = points.len() as f64;
        h.iter_mut().for_each(|v| *v /= total);
        Ok(h)
    }
}

/// Total variation between two 2-D samples on a fixed grid.
pub fn histogram_tv(a: &[Vec<f64>], b: &[Vec<f64>], grid: &HistogramGrid) -> Result<f64> {
    let ha = grid.histogram(a)?;
    let hb = grid.histogram(b)?;
    Ok(0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` (V-statistic).
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("energy distance of an empty sample".into()));
    }
    Ok(2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b))
}
