//! Chunk-wise minibatch optimal-transport pairing of data clips with noise draws.
//!
//! Each clip is cut into a grid of (channel block, time block) chunks. For every
//! chunk position the batch's data chunks and noise chunks are matched by an exact
//! linear assignment minimizing total squared Euclidean distance, and the noise is
//! re-assembled chunk by chunk according to those matchings.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub enabled: bool,
    /// Frames per chunk; 0 means the whole clip length.
    pub time_chunk: usize,
    /// Channels per chunk; 0 means all channels.
    pub channel_chunk: usize,
    /// Largest batch the exact solver accepts.
    pub max_batch: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            time_chunk: 4,
            channel_chunk: 8,
            max_batch: 128,
        }
    }
}

impl CouplingConfig {
    pub fn chunked(time_chunk: usize, channel_chunk: usize) -> Self {
        Self {
            enabled: true,
            time_chunk,
            channel_chunk,
            ..Self::default()
        }
    }

    pub fn validate(&self, channels: usize, frames: usize) -> Result<()> {
        if self.time_chunk != 0 && frames % self.time_chunk != 0 {
            return Err(Error::config(
                "coupling.time_chunk",
                format!("{} does not divide {frames} frames", self.time_chunk),
            ));
        }
        if self.channel_chunk != 0 && channels % self.channel_chunk != 0 {
            return Err(Error::config(
                "coupling.channel_chunk",
                format!("{} does not divide {channels} channels", self.channel_chunk),
            ));
        }
        Ok(())
    }
}

/// One block of the chunk grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPos {
    pub channels: Range<usize>,
    pub frames: Range<usize>,
}

/// The chunk grid of a `channels x frames` clip.
pub fn partition(channels: usize, frames: usize, config: &CouplingConfig) -> Result<Vec<ChunkPos>> {
    config.validate(channels, frames)?;
    let cc = if config.channel_chunk == 0 { channels } else { config.channel_chunk };
    let tc = if config.time_chunk == 0 { frames } else { config.time_chunk };
    let mut out = Vec::with_capacity((channels / cc) * (frames / tc));
    for c0 in (0..channels).step_by(cc) {
        for t0 in (0..frames).step_by(tc) {
            out.push(ChunkPos {
                channels: c0..c0 + cc,
                frames: t0..t0 + tc,
            });
        }
    }
    Ok(out)
}

fn chunk_sq_dist(a: &LatentClip, b: &LatentClip, pos: &ChunkPos) -> f64 {
    let t = a.frames();
    let mut acc = 0.0;
    for c in pos.channels.clone() {
        let ra = &a.data()[c * t + pos.frames.start..c * t + pos.frames.end];
        let rb = &b.data()[c * t + pos.frames.start..c * t + pos.frames.end];
        acc += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    acc
}

/// Minimum-cost perfect assignment of rows to columns of a square cost matrix.
/// Returns `(assignment, cost)` with `assignment[row] = column`.
///
/// Shortest augmenting paths with potentials (Kuhn-Munkres), `O(n^3)`.
pub fn assign(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Contract("assignment cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("assignment costs must be finite".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((assignment, total))
}

/// Per-chunk-position matchings of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTable {
    pub positions: Vec<ChunkPos>,
    /// `perms[p][j]` is the noise index paired with data clip `j` at position `p`.
    pub perms: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
}

impl PermutationTable {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Noise batch re-assembled so clip `j` carries, at every chunk position,
    /// the chunk of its matched noise draw.
    pub fn apply(&self, noise: &[LatentClip]) -> Result<Vec<LatentClip>> {
        let b = noise.len();
        if self.perms.iter().any(|p| p.len() != b) {
            return Err(Error::Contract("permutation table does not match batch size".into()));
        }
        let mut out: Vec<LatentClip> = noise.to_vec();
        let t = noise[0].frames();
        for (pos, perm) in self.positions.iter().zip(&self.perms) {
            for (j, &src) in perm.iter().enumerate() {
                for c in pos.channels.clone() {
                    let r = c * t + pos.frames.start..c * t + pos.frames.end;
                    let chunk: Vec<f64> = noise[src].data()[r.clone()].to_vec();
                    out[j].data_mut()[r].copy_from_slice(&chunk);
                }
            }
        }
        Ok(out)
    }
}

/// Solves the exact assignment at every chunk position.
pub fn ot_pair(data: &[&LatentClip], noise: &[LatentClip], config: &CouplingConfig) -> Result<PermutationTable> {
    let b = data.len();
    if b == 0 || noise.len() != b {
        return Err(Error::Contract("data and noise batches must be non-empty and equal length".into()));
    }
    if b > config.max_batch {
        return Err(Error::config(
            "coupling.max_batch",
            format!("batch of {b} exceeds the exact-assignment limit {}; use a smaller batch", config.max_batch),
        ));
    }
    let shape = data[0].shape();
    if data.iter().any(|c| c.shape() != shape) || noise.iter().any(|c| c.shape() != shape) {
        return Err(Error::Contract("coupled clips must share one shape".into()));
    }
    let positions = partition(shape.0, shape.1, config)?;
    let mut perms = Vec::with_capacity(positions.len());
    let mut costs = Vec::with_capacity(positions.len());
    for pos in &positions {
        let cost: Vec<Vec<f64>> = data
            .iter()
            .map(|d| noise.iter().map(|e| chunk_sq_dist(d, e, pos)).collect())
            .collect();
        let (perm, c) = assign(&cost)?;
        perms.push(perm);
        costs.push(c);
    }
    Ok(PermutationTable {
        positions,
        perms,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    fn random_batch(seed: u64, b: usize, c: usize, t: usize) -> Vec<LatentClip> {
        let mut r = rng::stream(seed, "batch");
        (0..b)
            .map(|_| LatentClip::new(c, t, (0..c * t).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn partition_counts() {
        let none = CouplingConfig::chunked(0, 0);
        assert_eq!(partition(32, 64, &none).unwrap().len(), 1);
        assert_eq!(partition(32, 8, &CouplingConfig::chunked(4, 8)).unwrap().len(), 8);
        assert!(matches!(
            partition(32, 7, &CouplingConfig::chunked(4, 0)),
            Err(Error::Config { ref key, .. }) if key == "coupling.time_chunk"
        ));
        assert!(partition(30, 8, &CouplingConfig::chunked(4, 8)).is_err());
    }

    #[test]
    fn two_by_two_example() {
        let (perm, cost) = assign(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert_eq!(cost, 2.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut r = rng::stream(1, "assign");
        for trial in 0..100 {
            let n = 1 + trial % 7;
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| r.random_range(0.0..10.0)).collect())
                .collect();
            let (perm, c) = assign(&cost).unwrap();
            let mut seen = perm.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert_eq!(c, brute_force(&cost));
        }
    }

    #[test]
    fn identical_batches_pair_with_themselves() {
        let data = random_batch(3, 6, 8, 8);
        let refs: Vec<&LatentClip> = data.iter().collect();
        let table = ot_pair(&refs, &data, &CouplingConfig::chunked(4, 4)).unwrap();
        for p in &table.perms {
            assert_eq!(p, &(0..6).collect::<Vec<_>>());
        }
        assert_eq!(table.total_cost(), 0.0);

        let single = ot_pair(&refs[..1], &data[1..2], &CouplingConfig::chunked(0, 0)).unwrap();
        assert_eq!(single.perms, vec![vec![0]]);
    }

    #[test]
    fn batch_limit_is_enforced() {
        let data = random_batch(4, 3, 2, 4);
        let refs: Vec<&LatentClip> = data.iter().collect();
        let cfg = CouplingConfig {
            max_batch: 2,
            ..CouplingConfig::chunked(0, 0)
        };
        assert!(matches!(ot_pair(&refs, &data, &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn permuted_noise_preserves_chunk_multisets_and_lowers_cost() {
        let data = random_batch(5, 8, 8, 8);
        let noise = random_batch(6, 8, 8, 8);
        let refs: Vec<&LatentClip> = data.iter().collect();
        let cfg = CouplingConfig::chunked(4, 4);
        let table = ot_pair(&refs, &noise, &cfg).unwrap();
        let paired = table.apply(&noise).unwrap();
        for pos in &table.positions {
            let key = |c: &LatentClip| -> Vec<u64> {
                let mut v = Vec::new();
                for ch in pos.channels.clone() {
                    for t in pos.frames.clone() {
                        v.push(c.get(ch, t).to_bits());
                    }
                }
                v
            };
            let mut a: Vec<Vec<u64>> = noise.iter().map(key).collect();
            let mut b: Vec<Vec<u64>> = paired.iter().map(key).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            let identity: f64 = data.iter().zip(&noise).map(|(d, e)| chunk_sq_dist(d, e, pos)).sum();
            let paired_cost: f64 = data.iter().zip(&paired).map(|(d, e)| chunk_sq_dist(d, e, pos)).sum();
            assert!(paired_cost <= identity + 1e-9);
        }
        let unchunked = ot_pair(&refs, &noise, &CouplingConfig::chunked(0, 0)).unwrap();
        assert!(table.total_cost() <= unchunked.total_cost() + 1e-9);
    }
}
