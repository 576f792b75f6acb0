//! Melody and timbre metrics for transfer evaluation.

mod classifier;
mod distribution;
mod frechet;
mod melody;
mod pitch;

pub use classifier::{train_timbre_classifier, ClassifierConfig, TimbreClassifier};
pub use distribution::{energy_distance, histogram_tv, HistogramGrid};
pub use frechet::{frechet, frechet_from_moments, EmbeddingSet};
pub use melody::{active_classes, dpd, jaccard, jaccard_sets, PITCHED_FLOOR};
pub use pitch::{PitchClassMatrix, PitchExtractor, CLASSES, PITCH_HIGH, PITCH_LOW};

use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::error::{Error, Result};

/// Threshold on max-normalized class probability for active sets.
pub const JACCARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dpd: f64,
    pub jaccard: f64,
    pub frechet: f64,
    pub classifier_accuracy: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub dpd: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvaluation {
    pub report: MetricsReport,
    pub pairs: Vec<PairScore>,
}

impl TransferEvaluation {
    /// CSV with columns `pair,dpd,jaccard`.
    pub fn write_pairs_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pair", "dpd", "jaccard"])?;
        for (i, p) in self.pairs.iter().enumerate() {
            out.write_record([i.to_string(), p.dpd.to_string(), p.jaccard.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Melody metrics between paired raw clips.
pub fn pair_scores(originals: &[LatentClip], transferred: &[LatentClip], extractor: &PitchExtractor) -> Result<Vec<PairScore>> {
    if originals.len() != transferred.len() {
        return Err(Error::Contract(format!(
            "{} originals but {} transferred clips",
            originals.len(),
            transferred.len()
        )));
    }
    originals
        .iter()
        .zip(transferred)
        .map(|(a, b)| {
            let p = extractor.pitch_class_matrix(a)?;
            let q = extractor.pitch_class_matrix(b)?;
            Ok(PairScore {
                dpd: dpd(&p, &q)?,
                jaccard: jaccard(&p, &q, JACCARD_THRESHOLD)?,
            })
        })
        .collect()
}

/// Scores a batch of transfers. All clips are raw codec features.
pub fn evaluate_transfer(
    originals: &[LatentClip],
    transferred: &[LatentClip],
    target_reference: &[LatentClip],
    classifier: &TimbreClassifier,
    target_class: &str,
    extractor: &PitchExtractor,
) -> Result<TransferEvaluation> {
    if target_reference.is_empty() {
        return Err(Error::Data("target reference set is empty".into()));
    }
    let pairs = pair_scores(originals, transferred, extractor)?;
    let n = pairs.len().max(1) as f64;
    let moved = EmbeddingSet::from_clips(transferred)?;
    let reference = EmbeddingSet::from_clips(target_reference)?;
    let report = MetricsReport {
        dpd: pairs.iter().map(|p| p.dpd).sum::<f64>() / n,
        jaccard: pairs.iter().map(|p| p.jaccard).sum::<f64>() / n,
        frechet: frechet(&moved, &reference)?,
        classifier_accuracy: classifier.fraction_predicted(&moved, classifier.class_index(target_class)?)?,
        pairs: pairs.len(),
    };
    Ok(TransferEvaluation { report, pairs })
}

/// DPD between clip `i` and clip `i + 1` (cyclically): the spread of melody
/// distance between unrelated clips.
pub fn unrelated_dpd(clips: &[LatentClip], extractor: &PitchExtractor) -> Result<Vec<f64>> {
    let mats = clips
        .iter()
        .map(|c| extractor.pitch_class_matrix(c))
        .collect::<Result<Vec<_>>>()?;
    (0..mats.len())
        .map(|i| dpd(&mats[i], &mats[(i + 1) % mats.len()]))
        .collect()
}

/// Linear-interpolated quantile of a sample, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[cfg(test)]
mod tests;
