use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::testbed::{ModelKey, Testbed};
use super::{non_increasing, AblationRow, AblationTable, StudyOutput, TrendVerdict};
use crate::bridge::{cycle, sample_shared, snap_top_sigma, transfer, BridgeConfig};
use crate::clip::LatentClip;
use crate::coupling::CouplingConfig;
use crate::denoiser::{Denoiser, NeuralDenoiser};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{dpd, median, MetricsReport, PitchExtractor};
use crate::pfode::Method;
use crate::rng;
use crate::schedule::ScheduleParams;
use crate::synth::{synth_shifted, FeatureCodec, InstrumentSpec, Split};

fn row(setting: String, r: &MetricsReport) -> AblationRow {
    AblationRow {
        setting,
        dpd: r.dpd,
        jaccard: r.jaccard,
        frechet: r.frechet,
        accuracy: r.classifier_accuracy,
    }
}

fn effective_top(schedule: &ScheduleParams, sigma: f64) -> Result<f64> {
    schedule.sigma_at(snap_top_sigma(schedule, sigma, false)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaAblation {
    pub source: String,
    pub target: String,
    /// `(sigma_max, requested sigma_{N-1})` per row.
    pub pairs: Vec<(f64, f64)>,
    /// Grid value each requested top sigma snapped to.
    pub effective_tops: Vec<f64>,
    pub table: AblationTable,
    pub n_clips: usize,
    pub unrelated_dpd_median: f64,
    pub real_frechet_floor: f64,
    /// DPD trend over the rows sharing the first row's `sigma_max`, in
    /// decreasing order of top sigma.
    pub verdict: TrendVerdict,
}

impl SigmaAblation {
    pub fn dpd_at(&self, sigma_max: f64, top: f64) -> Option<f64> {
        self.pairs.iter().position(|p| *p == (sigma_max, top)).map(|i| self.table.rows[i].dpd)
    }
}

impl StudyOutput for SigmaAblation {
    fn name(&self) -> &str {
        "sigma_ablation"
    }

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        self.table.write_csv(w)
    }

    fn summary(&self) -> String {
        format!(
            "{}  clips {}  unrelated DPD median {:.4}  real-vs-real Frechet {:.3}\n  DPD trend: {}\n",
            self.table.render(),
            self.n_clips,
            self.unrelated_dpd_median,
            self.real_frechet_floor,
            self.verdict.describe()
        )
    }
}

/// Evaluates `source -> target` transfer for each `(sigma_max, sigma_{N-1})`
/// pair. Models must already be present in the testbed.
pub fn sigma_ablation(testbed: &Testbed, source: &str, target: &str, pairs: &[(f64, f64)]) -> Result<SigmaAblation> {
    if pairs.is_empty() {
        return Err(Error::config("sigma_pairs", "at least one pair is required"));
    }
    let originals = testbed.test_clips(source)?;
    let mut table = AblationTable::new(format!("{source} -> {target}: sigma settings"));
    let mut effective_tops = Vec::new();
    for &(smax, top) in pairs {
        let a = &testbed.model(&ModelKey::new(source, smax))?.model;
        let b = &testbed.model(&ModelKey::new(target, smax))?.model;
        effective_tops.push(effective_top(&a.schedule, top)?);
        let out = testbed.transfer_raw(a, b, top, &originals)?;
        let eval = testbed.evaluate(&originals, &out, target)?;
        log::info!("sigma ablation smax={smax} top={top}: {:?}", eval.report);
        table.push(row(format!("smax={smax} top={top}"), &eval.report))?;
    }
    let base = pairs[0].0;
    let mut trend: Vec<(f64, f64)> = pairs
        .iter()
        .zip(&table.rows)
        .filter(|(p, _)| p.0 == base)
        .map(|(p, r)| (p.1, r.dpd))
        .collect();
    trend.sort_by(|a, b| b.0.total_cmp(&a.0));
    let dpds: Vec<f64> = trend.iter().map(|t| t.1).collect();
    Ok(SigmaAblation {
        source: source.into(),
        target: target.into(),
        pairs: pairs.to_vec(),
        effective_tops,
        table,
        n_clips: originals.len(),
        unrelated_dpd_median: median(&testbed.unrelated_dpd(source, target)?),
        real_frechet_floor: testbed.real_frechet_floor(target)?,
        verdict: non_increasing(&dpds, 1, 0.10),
    })
}

/// `(time_chunk,channel_chunk)`, or `off` when coupling is disabled.
pub fn coupling_label(c: &CouplingConfig) -> String {
    if c.enabled {
        format!("({},{})", c.time_chunk, c.channel_chunk)
    } else {
        "off".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingAblation {
    pub source: String,
    pub target: String,
    pub sigma_max: f64,
    pub configs: Vec<CouplingConfig>,
    pub tops: Vec<f64>,
    pub table: AblationTable,
    /// Mean per-epoch assignment cost while training the source model, per
    /// config. Batches and noise draws do not depend on the coupling, so the
    /// costs compare identical batches. `None` for models loaded from disk.
    pub assignment_costs: Vec<Option<f64>>,
}

impl StudyOutput for CouplingAblation {
    fn name(&self) -> &str {
        "coupling_ablation"
    }

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        self.table.write_csv(w)
    }

    fn summary(&self) -> String {
        let mut s = self.table.render();
        s += "  mean training assignment cost (source model):\n";
        for (c, cost) in self.configs.iter().zip(&self.assignment_costs) {
            let v = cost.map_or("n/a".to_string(), |v| format!("{v:.2}"));
            s += &format!("    {:<8} {v}\n", coupling_label(c));
        }
        s
    }
}

/// Evaluates transfer between models trained under each coupling config.
pub fn coupling_ablation(
    testbed: &Testbed,
    source: &str,
    target: &str,
    sigma_max: f64,
    configs: &[CouplingConfig],
    tops: &[f64],
) -> Result<CouplingAblation> {
    if configs.is_empty() || tops.is_empty() {
        return Err(Error::config("coupling", "configs and top sigmas must be non-empty"));
    }
    let originals = testbed.test_clips(source)?;
    let mut table = AblationTable::new(format!("{source} -> {target}: coupling (time_chunk, channel_chunk)"));
    let mut costs = Vec::new();
    for c in configs {
        let ka = ModelKey::new(source, sigma_max).with_coupling(*c);
        let a = testbed.model(&ka)?;
        let b = testbed.model(&ModelKey::new(target, sigma_max).with_coupling(*c))?;
        costs.push(a.report.as_ref().and_then(|r| {
            (!r.assignment_costs.is_empty()).then(|| r.assignment_costs.iter().sum::<f64>() / r.assignment_costs.len() as f64)
        }));
        for &top in tops {
            let out = testbed.transfer_raw(&a.model, &b.model, top, &originals)?;
            let eval = testbed.evaluate(&originals, &out, target)?;
            table.push(row(format!("{} top={top}", coupling_label(c)), &eval.report))?;
        }
    }
    Ok(CouplingAblation {
        source: source.into(),
        target: target.into(),
        sigma_max,
        configs: configs.to_vec(),
        tops: tops.to_vec(),
        table,
        assignment_costs: costs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchShiftStudy {
    pub high: String,
    pub low: String,
    pub top_sigma: f64,
    pub shifts: Vec<i32>,
    pub table: AblationTable,
    pub n_clips: usize,
}

impl PitchShiftStudy {
    pub fn row_for(&self, shift: i32) -> Option<&AblationRow> {
        self.shifts.iter().position(|s| *s == shift).map(|i| &self.table.rows[i])
    }
}

impl StudyOutput for PitchShiftStudy {
    fn name(&self) -> &str {
        "pitch_shift"
    }

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        self.table.write_csv(w)
    }

    fn summary(&self) -> String {
        format!("{}  clips {}  top sigma {}\n", self.table.render(), self.n_clips, self.top_sigma)
    }
}

/// Transfers test melodies of a high-register instrument, transposed by each
/// shift at inference time, to a low-register instrument.
///
/// Shifts may move the source no lower than its training range (its register,
/// extended downward by augmentation when the corpus augments it).
pub fn pitch_shift_study(testbed: &Testbed, high: &str, low: &str, shifts: &[i32], top_sigma: f64) -> Result<PitchShiftStudy> {
    let hi = InstrumentSpec::builtin(high)?;
    let lo = InstrumentSpec::builtin(low)?;
    if hi.register.0 < lo.register.0 + 12 {
        return Err(Error::config(
            "instruments",
            format!("{high} {:?} is not an octave above {low} {:?}", hi.register, lo.register),
        ));
    }
    let spec = &testbed.corpus.manifest.spec;
    let reach = if spec.augmented.iter().any(|a| a == high) { spec.augmentation.max_shift } else { 0 };
    for &s in shifts {
        if s > 0 || hi.register.0 + s < hi.register.0 - reach {
            return Err(Error::Domain(format!(
                "shift {s} leaves the {high} range ({}, {})",
                hi.register.0 - reach,
                hi.register.1
            )));
        }
    }
    let smax = testbed.config.schedule.sigma_max;
    let a = &testbed.model(&ModelKey::new(high, smax))?.model;
    let b = &testbed.model(&ModelKey::new(low, smax))?.model;
    let codec = FeatureCodec::new(*testbed.corpus.codec())?;
    let melodies: Vec<_> = testbed
        .corpus
        .entries(high, Split::Test)
        .take(testbed.config.eval_clips)
        .map(|(r, _)| r.melody.clone())
        .collect();
    let mut table = AblationTable::new(format!("{high} -> {low}: inference pitch shift"));
    for &s in shifts {
        let originals: Vec<LatentClip> = melodies
            .iter()
            .map(|m| {
                let f = codec.features(&synth_shifted(m, s, &hi, codec.spec())?)?;
                Ok(f.map_data(f.data().iter().map(|v| io::quantize(*v)).collect()))
            })
            .collect::<Result<_>>()?;
        let out = testbed.transfer_raw(a, b, top_sigma, &originals)?;
        let eval = testbed.evaluate(&originals, &out, low)?;
        log::info!("pitch shift {s}: {:?}", eval.report);
        table.push(row(format!("shift={s}"), &eval.report))?;
    }
    Ok(PitchShiftStudy {
        high: high.into(),
        low: low.into(),
        top_sigma,
        shifts: shifts.to_vec(),
        table,
        n_clips: melodies.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedLatentConfig {
    pub n_trials: usize,
    pub sigma_top: f64,
    pub method: Method,
    pub seed: u64,
}

impl Default for SharedLatentConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            sigma_top: 100.0,
            method: Method::Heun,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedTrial {
    /// DPD between both models' outputs from one latent.
    pub same: f64,
    /// DPD between model A from this latent and model B from an independent one.
    pub independent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedLatentSummary {
    pub config: SharedLatentConfig,
    pub effective_top: f64,
    pub threshold: f64,
    pub trials: Vec<SharedTrial>,
    pub median_same: f64,
    pub median_independent: f64,
    /// Fractions below the threshold; absent for a single trial.
    pub fraction_same: Option<f64>,
    pub fraction_independent: Option<f64>,
}

impl StudyOutput for SharedLatentSummary {
    fn name(&self) -> &str {
        "shared_latent"
    }

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "same", "independent"])?;
        for (i, t) in self.trials.iter().enumerate() {
            out.write_record([i.to_string(), t.same.to_string(), t.independent.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    fn summary(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
        format!(
            "shared latent: {} trials at sigma {}\n  median DPD same latent {:.4}  independent {:.4}\n  below threshold {:.4}: same {}  independent {}\n",
            self.trials.len(),
            self.effective_top,
            self.median_same,
            self.median_independent,
            self.threshold,
            f(self.fraction_same),
            f(self.fraction_independent)
        )
    }
}

/// Generates from shared and from independent latents with two models and
/// compares the melodies of the results.
pub fn shared_latent_study(
    model_a: &NeuralDenoiser,
    model_b: &NeuralDenoiser,
    extractor: &PitchExtractor,
    threshold: f64,
    config: &SharedLatentConfig,
) -> Result<SharedLatentSummary> {
    if model_a.schedule.sigma_max != model_b.schedule.sigma_max {
        return Err(Error::config("sigma_max", "both models must be trained with the same sigma_max"));
    }
    if config.n_trials == 0 {
        return Err(Error::config("n_trials", "must be positive"));
    }
    let cfg = BridgeConfig::new(model_a, model_b, model_a.schedule, config.sigma_top, config.method, false)?;
    let top = cfg.top_sigma();
    let (c, t) = (model_a.arch.channels, model_a.frames);
    let draw = |label: &str, i: usize| -> Result<LatentClip> {
        let mut r = rng::indexed(config.seed, label, i as u64);
        LatentClip::new(c, t, (0..c * t).map(|_| top * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect())
    };
    let generate = |z: &LatentClip, m: &NeuralDenoiser| -> Result<LatentClip> { m.stats.denormalize(&sample_shared(z, m, &cfg)?) };
    let mut trials = Vec::with_capacity(config.n_trials);
    for i in 0..config.n_trials {
        let z = draw("shared/latent", i)?;
        let w = draw("shared/independent", i)?;
        let pa = extractor.pitch_class_matrix(&generate(&z, model_a)?)?;
        let pb = extractor.pitch_class_matrix(&generate(&z, model_b)?)?;
        let pw = extractor.pitch_class_matrix(&generate(&w, model_b)?)?;
        trials.push(SharedTrial {
            same: dpd(&pa, &pb)?,
            independent: dpd(&pa, &pw)?,
        });
    }
    let same: Vec<f64> = trials.iter().map(|t| t.same).collect();
    let ind: Vec<f64> = trials.iter().map(|t| t.independent).collect();
    let frac = |v: &[f64]| (v.len() > 1).then(|| v.iter().filter(|d| **d < threshold).count() as f64 / v.len() as f64);
    Ok(SharedLatentSummary {
        config: config.clone(),
        effective_top: top,
        threshold,
        median_same: median(&same),
        median_independent: median(&ind),
        fraction_same: frac(&same),
        fraction_independent: frac(&ind),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub step_counts: Vec<usize>,
    pub method: Method,
    /// Grid whose step count is replaced per point.
    pub schedule: ScheduleParams,
    /// `None` bridges through `sigma_max`.
    pub top_sigma: Option<f64>,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            step_counts: vec![25, 50, 100, 200],
            method: Method::Heun,
            schedule: ScheduleParams::default(),
            top_sigma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclePoint {
    pub n_steps: usize,
    /// Mean normalized L2 between clips and their round trip through the target.
    pub mean_error: f64,
    pub max_error: f64,
    /// Mean normalized L2 of a source-to-source transfer.
    pub self_error: f64,
    pub seconds_per_transfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCurve {
    pub config: CycleConfig,
    pub n_clips: usize,
    pub points: Vec<CyclePoint>,
    pub verdict: TrendVerdict,
}

impl CycleCurve {
    pub fn point(&self, n_steps: usize) -> Option<&CyclePoint> {
        self.points.iter().find(|p| p.n_steps == n_steps)
    }
}

impl StudyOutput for CycleCurve {
    fn name(&self) -> &str {
        "cycle"
    }

    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n_steps", "mean_error", "max_error", "self_error", "seconds_per_transfer"])?;
        for p in &self.points {
            out.write_record([
                p.n_steps.to_string(),
                p.mean_error.to_string(),
                p.max_error.to_string(),
                p.self_error.to_string(),
                p.seconds_per_transfer.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    fn summary(&self) -> String {
        let mut s = format!("cycle study: {} clips, {}\n", self.n_clips, self.config.method);
        for p in &self.points {
            s += &format!(
                "  N={:<4} cycle {:.3e} (max {:.3e})  self {:.3e}  {:.3e}s/transfer\n",
                p.n_steps, p.mean_error, p.max_error, p.self_error, p.seconds_per_transfer
            );
        }
        s += &format!("  error trend: {}\n", self.verdict.describe());
        s
    }
}

/// Cycle reconstruction error against grid size. `clips` live in the models'
/// (normalized) space.
pub fn cycle_study(source: &dyn Denoiser, target: &dyn Denoiser, clips: &[LatentClip], config: &CycleConfig) -> Result<CycleCurve> {
    if config.step_counts.len() < 3 {
        return Err(Error::config("step_counts", "at least 3 step counts are required"));
    }
    if clips.is_empty() {
        return Err(Error::config("clips", "at least one clip is required"));
    }
    let mut counts = config.step_counts.clone();
    counts.sort_unstable();
    let mut points = Vec::new();
    for &n in &counts {
        let s = config.schedule.with_steps(n)?;
        let top = config.top_sigma.unwrap_or(s.sigma_max);
        let pair = BridgeConfig::new(source, target, s, top, config.method, false)?;
        let own = BridgeConfig::new(source, source, s, top, config.method, false)?;
        let start = Instant::now();
        let errors: Vec<f64> = clips
            .iter()
            .map(|x| Ok(cycle(x, &pair)?.normalized_distance(x)))
            .collect::<Result<_>>()?;
        let seconds_per_transfer = start.elapsed().as_secs_f64() / (2 * clips.len()) as f64;
        let self_error = clips
            .iter()
            .map(|x| Ok(transfer(x, &own)?.normalized_distance(x)))
            .sum::<Result<f64>>()?
            / clips.len() as f64;
        points.push(CyclePoint {
            n_steps: n,
            mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
            max_error: errors.iter().cloned().fold(0.0, f64::max),
            self_error,
            seconds_per_transfer,
        });
    }
    let errs: Vec<f64> = points.iter().map(|p| p.mean_error).collect();
    Ok(CycleCurve {
        config: config.clone(),
        n_clips: clips.len(),
        verdict: non_increasing(&errs, 1, 0.10),
        points,
    })
}
