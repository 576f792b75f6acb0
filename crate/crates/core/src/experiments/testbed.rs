use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge::{transfer, BridgeConfig};
use crate::clip::LatentClip;
use crate::coupling::CouplingConfig;
use crate::denoiser::{train, NeuralDenoiser, TrainingConfig, TrainingReport};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{
    evaluate_transfer, frechet, quantile, train_timbre_classifier, unrelated_dpd, ClassifierConfig, EmbeddingSet, PitchExtractor,
    TimbreClassifier, TransferEvaluation,
};
use crate::pfode::Method;
use crate::rng;
use crate::schedule::ScheduleParams;
use crate::synth::{generate_corpus, Corpus, CorpusSpec, Split};

/// Schedules equal up to checkpoint (f32) rounding.
pub(crate) fn same_schedule(a: &ScheduleParams, b: &ScheduleParams) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * x.abs().max(y.abs());
    a.n_steps == b.n_steps && close(a.sigma_min, b.sigma_min) && close(a.sigma_max, b.sigma_max) && close(a.rho, b.rho) && close(a.sigma_data, b.sigma_data)
}

/// Everything needed to rebuild the synthetic-instrument testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub corpus: CorpusSpec,
    /// Shared by every model; its seed is split per model.
    pub training: TrainingConfig,
    pub classifier: ClassifierConfig,
    /// Training and inference grid; `sigma_max` is replaced per model.
    pub schedule: ScheduleParams,
    pub method: Method,
    /// Test clips per source instrument used in evaluations.
    pub eval_clips: usize,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec {
                instruments: vec!["flute".into(), "violin".into(), "bassoon".into()],
                clips_per_instrument: 800,
                augmented: vec!["flute".into()],
                ..CorpusSpec::default()
            },
            training: TrainingConfig {
                steps: 9000,
                lr: 1e-3,
                ..TrainingConfig::default()
            },
            classifier: ClassifierConfig::default(),
            schedule: ScheduleParams::default(),
            method: Method::Heun,
            eval_clips: 200,
        }
    }
}

impl TestbedConfig {
    /// A seconds-scale configuration for smoke runs.
    pub fn small() -> Self {
        let mut c = Self::default();
        c.corpus.clips_per_instrument = 24;
        c.training.steps = 30;
        c.training.batch_size = 4;
        c.classifier.epochs = 50;
        c.schedule = c.schedule.with_steps(20).expect("valid grid");
        c.eval_clips = 4;
        c
    }
}

/// Identifies one trained denoiser of the testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelKey {
    pub instrument: String,
    pub sigma_max: f64,
    pub coupling: CouplingConfig,
}

impl ModelKey {
    pub fn new(instrument: impl Into<String>, sigma_max: f64) -> Self {
        Self {
            instrument: instrument.into(),
            sigma_max,
            coupling: CouplingConfig::default(),
        }
    }

    pub fn with_coupling(mut self, coupling: CouplingConfig) -> Self {
        self.coupling = coupling;
        self
    }

    /// Stable name used for seeds and checkpoint files.
    pub fn label(&self) -> String {
        let c = if self.coupling.enabled {
            format!("ot{}x{}", self.coupling.time_chunk, self.coupling.channel_chunk)
        } else {
            "plain".to_string()
        };
        format!("{}_smax{}_{c}", self.instrument, self.sigma_max)
    }

    pub fn checkpoint_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.dbck", self.label()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub key: ModelKey,
    pub model: NeuralDenoiser,
    /// `None` for models loaded from disk.
    pub report: Option<TrainingReport>,
}

/// Corpus, evaluation tools and a cache of trained denoisers.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub config: TestbedConfig,
    pub corpus: Corpus,
    pub classifier: TimbreClassifier,
    pub extractor: PitchExtractor,
    models: Vec<TrainedModel>,
}

impl Testbed {
    /// Generates the corpus and trains the timbre classifier.
    pub fn build(config: TestbedConfig) -> Result<Self> {
        let corpus = generate_corpus(&config.corpus)?;
        Self::from_corpus(config, corpus)
    }

    pub fn from_corpus(mut config: TestbedConfig, corpus: Corpus) -> Result<Self> {
        config.corpus = corpus.manifest.spec.clone();
        let train_set = EmbeddingSet::from_clips(corpus.instruments().iter().flat_map(|i| corpus.select(i, Split::Train)))?;
        let classifier = train_timbre_classifier(&train_set, &config.classifier)?;
        let extractor = PitchExtractor::new(*corpus.codec())?;
        Ok(Self {
            config,
            corpus,
            classifier,
            extractor,
            models: Vec::new(),
        })
    }

    /// Held-out classifier accuracy over every test clip.
    pub fn classifier_accuracy(&self) -> Result<f64> {
        let test = EmbeddingSet::from_clips(self.corpus.instruments().iter().flat_map(|i| self.corpus.select(i, Split::Test)))?;
        self.classifier.accuracy(&test)
    }

    pub fn schedule_for(&self, sigma_max: f64) -> Result<ScheduleParams> {
        self.config.schedule.with_sigma_max(sigma_max)
    }

    pub fn training_config(&self, key: &ModelKey) -> TrainingConfig {
        TrainingConfig {
            seed: rng::split_seed(self.config.training.seed, &key.label()),
            coupling: key.coupling,
            ..self.config.training.clone()
        }
    }

    pub fn model(&self, key: &ModelKey) -> Result<&TrainedModel> {
        self.models
            .iter()
            .find(|m| m.key == *key)
            .ok_or_else(|| Error::config("checkpoint", format!("no trained model '{}'", key.label())))
    }

    pub fn models(&self) -> &[TrainedModel] {
        &self.models
    }

    pub fn insert(&mut self, key: ModelKey, model: NeuralDenoiser, report: Option<TrainingReport>) {
        self.models.retain(|m| m.key != key);
        self.models.push(TrainedModel { key, model, report });
    }

    /// Trains `key` unless it is already present.
    pub fn ensure_model(&mut self, key: &ModelKey) -> Result<&TrainedModel> {
        if self.model(key).is_err() {
            let data = self.corpus.normalized(&key.instrument, Split::Train)?;
            let schedule = self.schedule_for(key.sigma_max)?;
            log::info!("training {}", key.label());
            let (model, report) = train(&data, &self.corpus.stats, schedule, &self.training_config(key))?;
            log::info!("trained {}: final loss {:.4} in {:.1}s", key.label(), report.final_loss, report.wall_seconds);
            self.insert(key.clone(), model, Some(report));
        }
        self.model(key)
    }

    /// Loads `key` from `dir` when present there, keeping any training report
    /// already held for it.
    pub fn load_model(&mut self, key: &ModelKey, dir: &Path) -> Result<bool> {
        let path = key.checkpoint_path(dir);
        if !path.exists() {
            return Ok(false);
        }
        let model = io::load_denoiser(&path)?;
        let report = self.model(key).ok().and_then(|m| m.report.clone());
        self.insert(key.clone(), model, report);
        Ok(true)
    }

    pub fn save_models(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for m in &self.models {
            let path = m.key.checkpoint_path(dir);
            io::save_denoiser(&path, &m.model)?;
            out.push(path);
        }
        Ok(out)
    }

    /// The first `eval_clips` raw test clips of `instrument`.
    pub fn test_clips(&self, instrument: &str) -> Result<Vec<LatentClip>> {
        let clips: Vec<LatentClip> = self
            .corpus
            .select(instrument, Split::Test)
            .into_iter()
            .take(self.config.eval_clips)
            .cloned()
            .collect();
        if clips.is_empty() {
            return Err(Error::config("instrument", format!("no test clips of '{instrument}'")));
        }
        Ok(clips)
    }

    /// Every raw test clip of `instrument`.
    pub fn reference_clips(&self, instrument: &str) -> Vec<LatentClip> {
        self.corpus.select(instrument, Split::Test).into_iter().cloned().collect()
    }

    /// Transfers raw clips and returns raw clips.
    pub fn transfer_raw(&self, source: &NeuralDenoiser, target: &NeuralDenoiser, top_sigma: f64, clips: &[LatentClip]) -> Result<Vec<LatentClip>> {
        if !same_schedule(&source.schedule, &target.schedule) {
            return Err(Error::config("schedule", "source and target models were trained on different schedules"));
        }
        let cfg = BridgeConfig::new(source, target, source.schedule, top_sigma, self.config.method, false)?;
        clips
            .iter()
            .map(|c| {
                let x = source.stats.normalize(c)?;
                target.stats.denormalize(&transfer(&x, &cfg)?)
            })
            .collect()
    }

    pub fn evaluate(&self, originals: &[LatentClip], outputs: &[LatentClip], target_instrument: &str) -> Result<TransferEvaluation> {
        let reference = self.reference_clips(target_instrument);
        evaluate_transfer(originals, outputs, &reference, &self.classifier, target_instrument, &self.extractor)
    }

    /// DPD between unrelated test melodies of `a` and `b` (clip `i` of `a`
    /// against clip `i+1` of `b`, cyclically).
    pub fn unrelated_dpd(&self, a: &str, b: &str) -> Result<Vec<f64>> {
        if a == b {
            return unrelated_dpd(&self.test_clips(a)?, &self.extractor);
        }
        let xa = self.test_clips(a)?;
        let xb = self.test_clips(b)?;
        let n = xa.len().min(xb.len());
        (0..n)
            .map(|i| {
                let pa = self.extractor.pitch_class_matrix(&xa[i])?;
                let pb = self.extractor.pitch_class_matrix(&xb[(i + 1) % n])?;
                crate::metrics::dpd(&pa, &pb)
            })
            .collect()
    }

    /// Calibrated melody-similarity threshold: 25th percentile of unrelated DPD.
    pub fn similarity_threshold(&self, a: &str, b: &str) -> Result<f64> {
        Ok(quantile(&self.unrelated_dpd(a, b)?, 0.25))
    }

    /// Frechet distance between the train and test clips of one instrument.
    pub fn real_frechet_floor(&self, instrument: &str) -> Result<f64> {
        let a = EmbeddingSet::from_clips(self.corpus.select(instrument, Split::Train))?;
        let b = EmbeddingSet::from_clips(self.corpus.select(instrument, Split::Test))?;
        frechet(&a, &b)
    }
}
