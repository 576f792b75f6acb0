//! Scripted studies: solver convergence on analytic mixtures, and the
//! ablations run on the synthetic-instrument testbed.
//!
//! Every study result serializes to JSON, renders a CSV table and a short
//! text summary, and can write all three into its own directory.

mod convergence;
mod studies;
mod testbed;

pub use convergence::{convergence_study, ConvergenceConfig, ConvergencePoint, ConvergenceReport, ConvergenceResult, GmmPair};
pub use studies::{
    coupling_ablation, coupling_label, cycle_study, pitch_shift_study, shared_latent_study, sigma_ablation, CouplingAblation,
    CycleConfig, CycleCurve, CyclePoint, PitchShiftStudy, SharedLatentConfig, SharedLatentSummary, SharedTrial, SigmaAblation,
};
pub use testbed::{ModelKey, Testbed, TestbedConfig, TrainedModel};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A study result that can be persisted.
pub trait StudyOutput: Serialize + Sized {
    /// File stem of the CSV and JSON outputs.
    fn name(&self) -> &str;

    fn write_csv(&self, w: &mut dyn Write) -> Result<()>;

    fn summary(&self) -> String;

    /// Writes `<name>.csv`, `<name>.json` and `summary.txt` into `dir`.
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        let json_path = dir.join(format!("{}.json", self.name()));
        crate::io::write_json(&json_path, self)?;
        let txt = dir.join("summary.txt");
        std::fs::write(&txt, self.summary())?;
        Ok(vec![csv_path, json_path, txt])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub dpd: f64,
    pub jaccard: f64,
    pub frechet: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub title: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: AblationRow) -> Result<()> {
        if ![row.dpd, row.jaccard, row.frechet, row.accuracy].iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("non-finite metric in row '{}'", row.setting)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["setting", "dpd", "jaccard", "frechet", "accuracy"])?;
        for r in &self.rows {
            out.write_record([
                r.setting.clone(),
                r.dpd.to_string(),
                r.jaccard.to_string(),
                r.frechet.to_string(),
                r.accuracy.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.setting.len()).max().unwrap_or(7).max(7);
        let mut s = format!("{}\n  {:<width$}  {:>8}  {:>8}  {:>9}  {:>8}\n", self.title, "setting", "DPD", "Jaccard", "Frechet", "accuracy");
        for r in &self.rows {
            s += &format!(
                "  {:<width$}  {:>8.4}  {:>8.4}  {:>9.3}  {:>8.3}\n",
                r.setting, r.dpd, r.jaccard, r.frechet, r.accuracy
            );
        }
        s
    }
}

/// Outcome of checking that a sequence does not increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    /// `(index, relative increase)` for every adjacent pair `values[i] < values[i+1]`.
    pub violations: Vec<(usize, f64)>,
    pub max_violations: usize,
    pub tolerance: f64,
    pub holds: bool,
}

/// Accepts a sequence as non-increasing when at most `max_violations`
/// adjacent increases occur, each at most `tolerance` relative to the
/// preceding value.
pub fn non_increasing(values: &[f64], max_violations: usize, tolerance: f64) -> TrendVerdict {
    let violations: Vec<(usize, f64)> = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, w)| {
            let rel = if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { f64::INFINITY };
            (i, rel)
        })
        .collect();
    let holds = violations.len() <= max_violations && violations.iter().all(|(_, r)| *r <= tolerance);
    TrendVerdict {
        violations,
        max_violations,
        tolerance,
        holds,
    }
}

impl TrendVerdict {
    pub fn describe(&self) -> String {
        if self.violations.is_empty() {
            return "non-increasing".into();
        }
        let v: Vec<String> = self.violations.iter().map(|(i, r)| format!("{i}->{} (+{:.1}%)", i + 1, 100.0 * r)).collect();
        format!("{} ({})", if self.holds { "holds" } else { "fails" }, v.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_verdicts() {
        assert!(non_increasing(&[4.0, 3.0, 3.0, 1.0], 1, 0.1).holds);
        assert!(non_increasing(&[4.0, 3.0, 3.2, 1.0], 1, 0.1).holds);
        assert!(!non_increasing(&[4.0, 3.0, 3.5, 1.0], 1, 0.1).holds);
        assert!(!non_increasing(&[4.0, 4.1, 3.0, 3.1], 1, 0.1).holds);
        assert!(non_increasing(&[], 0, 0.0).holds);
    }

    #[test]
    fn ablation_rejects_nan() {
        let mut t = AblationTable::new("t");
        let row = AblationRow {
            setting: "a".into(),
            dpd: f64::NAN,
            jaccard: 0.0,
            frechet: 0.0,
            accuracy: 1.0,
        };
        assert!(t.push(row).is_err());
    }
}
