use super::pitch::{PitchClassMatrix, CLASSES};
use crate::error::{Error, Result};

/// Frames whose largest class probability stays below this are treated as
/// unpitched when forming active sets.
pub const PITCHED_FLOOR: f64 = 2.0 / CLASSES as f64;

fn column_distance(a: &[f64; CLASSES], b: &[f64; CLASSES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dynamic pitch distance: DTW over frames with Euclidean column cost and
/// steps (1,0), (0,1), (1,1), divided by the number of cells on the path.
pub fn dpd(p: &PitchClassMatrix, q: &PitchClassMatrix) -> Result<f64> {
    let (n, m) = (p.frames(), q.frames());
    if n == 0 || m == 0 {
        return Err(Error::Data("DTW needs at least one frame on each side".into()));
    }
    let (a, b) = (p.columns(), q.columns());
    // (cost, cells) per cell; ties prefer fewer cells, then the diagonal.
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    for i in 0..n {
        for j in 0..m {
            let c = column_distance(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                let mut consider = |cand: (f64, usize)| {
                    if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                };
                if i > 0 && j > 0 {
                    consider(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    consider(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    consider(acc[i * m + j - 1]);
                }
                best
            };
            acc[i * m + j] = (best.0 + c, best.1 + 1);
        }
    }
    let (cost, cells) = acc[n * m - 1];
    Ok(cost / cells as f64)
}

/// Consecutive frames a class must hold to count as active.
pub const MIN_RUN: usize = 3;

/// Classes whose per-frame max-normalized probability exceeds `threshold` for
/// at least [`MIN_RUN`] consecutive pitched frames (all frames when the clip
/// is shorter).
pub fn active_classes(p: &PitchClassMatrix, threshold: f64) -> [bool; CLASSES] {
    let run = MIN_RUN.min(p.frames()).max(1);
    let mut active = [false; CLASSES];
    let mut held = [0usize; CLASSES];
    for col in p.columns() {
        let top = col.iter().cloned().fold(0.0, f64::max);
        for c in 0..CLASSES {
            if top >= PITCHED_FLOOR && col[c] / top > threshold {
                held[c] += 1;
                active[c] |= held[c] >= run;
            } else {
                held[c] = 0;
            }
        }
    }
    active
}

/// Jaccard distance between active pitch-class sets.
pub fn jaccard(p: &PitchClassMatrix, q: &PitchClassMatrix, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("jaccard.threshold", "must lie in (0, 1)"));
    }
    Ok(jaccard_sets(&active_classes(p, threshold), &active_classes(q, threshold)))
}

/// `1 - |A & B| / |A | B|`, zero when both sets are empty.
pub fn jaccard_sets(a: &[bool; CLASSES], b: &[bool; CLASSES]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}
