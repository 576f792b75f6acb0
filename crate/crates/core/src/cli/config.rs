//! Run configuration: defaults, config files and flag overrides, all funnelled
//! through one flat key namespace (`section.key`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingConfig;
use crate::denoiser::TrainingConfig;
use crate::error::{Error, Result};
use crate::experiments::TestbedConfig;
use crate::pfode::{Direction, Method};
use crate::schedule::ScheduleParams;
use crate::synth::{CorpusSpec, FeatureCodecSpec};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DUALBRIDGE_OUT";

/// Every settable key. A bare name (`steps`) resolves to the single key
/// ending in it.
pub const KEYS: &[&str] = &[
    "schedule.sigma_min",
    "schedule.sigma_max",
    "schedule.rho",
    "schedule.steps",
    "schedule.sigma_data",
    "training.batch_size",
    "training.train_steps",
    "training.lr",
    "training.beta1",
    "training.beta2",
    "training.eps",
    "training.weight_decay",
    "training.ema_beta",
    "training.ema_power",
    "coupling.enabled",
    "coupling.time_chunk",
    "coupling.channel_chunk",
    "coupling.max_batch",
    "codec.sample_rate",
    "codec.n_bands",
    "codec.hop",
    "codec.window",
    "codec.fft_size",
    "codec.f_low",
    "codec.f_high",
    "codec.log_floor",
    "codec.clip_samples",
    "corpus.instruments",
    "corpus.clips",
    "corpus.test_fraction",
    "corpus.augment",
    "corpus.notes_per_clip",
    "solver.method",
    "solver.direction",
    "solver.inference_sigma",
    "paths.dataset",
    "paths.checkpoints",
    "paths.source_ckpt",
    "paths.target_ckpt",
    "paths.input",
    "paths.output",
    "paths.report",
    "paths.classifier",
    "paths.originals",
    "paths.transferred",
    "run.seed",
    "run.out",
    "run.jobs",
    "study.instrument",
    "study.source",
    "study.target",
    "study.low",
    "study.eval_clips",
    "study.trials",
    "study.count",
    "study.cycle_clips",
    "study.samples",
    "study.methods",
    "study.step_counts",
    "study.shifts",
    "study.pairs",
    "study.configs",
    "study.tops",
    "study.train_missing",
    "study.analytic",
];

/// Resolves a possibly unqualified key to its canonical name.
pub fn resolve_key(name: &str) -> Result<&'static str> {
    let name = name.trim().replace('-', "_");
    if let Some(k) = KEYS.iter().find(|k| **k == name) {
        return Ok(k);
    }
    let hits: Vec<&&str> = KEYS.iter().filter(|k| k.rsplit('.').next() == Some(name.as_str())).collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::config(name, "unknown key")),
        _ => Err(Error::config(name, "ambiguous key; qualify it with its section")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub source_ckpt: Option<PathBuf>,
    pub target_ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub originals: Option<PathBuf>,
    pub transferred: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub method: Method,
    pub direction: Direction,
    /// Bridge top sigma `sigma_{N-1}`; `None` uses `sigma_max`.
    pub inference_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    /// Instrument a `train` or `eval` run concerns.
    pub instrument: Option<String>,
    pub source: String,
    pub target: String,
    /// Low-register instrument of the pitch-shift study.
    pub low: String,
    pub eval_clips: usize,
    pub trials: usize,
    /// Latents drawn by `sample-shared`.
    pub count: usize,
    pub cycle_clips: usize,
    pub samples: usize,
    pub methods: Vec<Method>,
    pub step_counts: Vec<usize>,
    pub shifts: Vec<i32>,
    /// `(sigma_max, sigma_{N-1})`.
    pub pairs: Vec<(f64, f64)>,
    /// `(time_chunk, channel_chunk)`.
    pub configs: Vec<(usize, usize)>,
    pub tops: Vec<f64>,
    pub train_missing: bool,
    /// Run the cycle study on the analytic mixture pair.
    pub analytic: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            instrument: None,
            source: "flute".into(),
            target: "violin".into(),
            low: "bassoon".into(),
            eval_clips: 200,
            trials: 100,
            count: 4,
            cycle_clips: 100,
            samples: 20_000,
            methods: Method::ALL.to_vec(),
            step_counts: Vec::new(),
            shifts: vec![0, -12, -24],
            pairs: vec![(100.0, 100.0), (100.0, 50.0), (100.0, 20.0), (100.0, 5.0), (5.0, 5.0)],
            configs: vec![(0, 0), (4, 0), (4, 8)],
            tops: vec![5.0, 100.0],
            train_missing: false,
            analytic: false,
        }
    }
}

/// Effective settings of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub schedule: ScheduleParams,
    pub training: TrainingConfig,
    pub coupling: CouplingConfig,
    pub codec: FeatureCodecSpec,
    pub corpus: CorpusSpec,
    pub solver: SolverSettings,
    pub paths: Paths,
    pub study: StudySettings,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
}

impl RunConfig {
    /// Defaults for `command`; the output root comes from the environment
    /// when set.
    pub fn defaults(command: &str) -> Self {
        let tb = TestbedConfig::default();
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dualbridge-out"));
        Self {
            command: command.into(),
            schedule: tb.schedule,
            training: tb.training,
            coupling: CouplingConfig::default(),
            codec: tb.corpus.codec,
            corpus: tb.corpus,
            solver: SolverSettings {
                method: Method::Heun,
                direction: Direction::Forward,
                inference_sigma: None,
            },
            paths: Paths::default(),
            study: StudySettings::default(),
            seed: 0,
            out: root.join(command),
            jobs: 1,
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = resolve_key(key)?;
        let v = value.trim();
        let p = |v: &str| -> Result<PathBuf> { Ok(PathBuf::from(v)) };
        match key {
            "schedule.sigma_min" => self.schedule.sigma_min = num(key, v)?,
            "schedule.sigma_max" => self.schedule.sigma_max = num(key, v)?,
            "schedule.rho" => self.schedule.rho = num(key, v)?,
            "schedule.steps" => self.schedule.n_steps = num(key, v)?,
            "schedule.sigma_data" => self.schedule.sigma_data = num(key, v)?,
            "training.batch_size" => self.training.batch_size = num(key, v)?,
            "training.train_steps" => self.training.steps = num(key, v)?,
            "training.lr" => self.training.lr = num(key, v)?,
            "training.beta1" => self.training.beta1 = num(key, v)?,
            "training.beta2" => self.training.beta2 = num(key, v)?,
            "training.eps" => self.training.eps = num(key, v)?,
            "training.weight_decay" => self.training.weight_decay = num(key, v)?,
            "training.ema_beta" => self.training.ema_beta = num(key, v)?,
            "training.ema_power" => self.training.ema_power = num(key, v)?,
            "coupling.enabled" => self.coupling.enabled = num(key, v)?,
            "coupling.time_chunk" => self.coupling.time_chunk = num(key, v)?,
            "coupling.channel_chunk" => self.coupling.channel_chunk = num(key, v)?,
            "coupling.max_batch" => self.coupling.max_batch = num(key, v)?,
            "codec.sample_rate" => self.codec.sample_rate = num(key, v)?,
            "codec.n_bands" => self.codec.n_bands = num(key, v)?,
            "codec.hop" => self.codec.hop = num(key, v)?,
            "codec.window" => self.codec.window = num(key, v)?,
            "codec.fft_size" => self.codec.fft_size = num(key, v)?,
            "codec.f_low" => self.codec.f_low = num(key, v)?,
            "codec.f_high" => self.codec.f_high = num(key, v)?,
            "codec.log_floor" => self.codec.log_floor = num(key, v)?,
            "codec.clip_samples" => self.codec.clip_samples = num(key, v)?,
            "corpus.instruments" => self.corpus.instruments = list(key, v)?,
            "corpus.clips" => self.corpus.clips_per_instrument = num(key, v)?,
            "corpus.test_fraction" => self.corpus.test_fraction = num(key, v)?,
            "corpus.augment" => self.corpus.augmented = list(key, v)?,
            "corpus.notes_per_clip" => self.corpus.notes_per_clip = num(key, v)?,
            "solver.method" => self.solver.method = num(key, v)?,
            "solver.direction" => self.solver.direction = num(key, v)?,
            "solver.inference_sigma" => self.solver.inference_sigma = Some(num(key, v)?),
            "paths.dataset" => self.paths.dataset = Some(p(v)?),
            "paths.checkpoints" => self.paths.checkpoints = Some(p(v)?),
            "paths.source_ckpt" => self.paths.source_ckpt = Some(p(v)?),
            "paths.target_ckpt" => self.paths.target_ckpt = Some(p(v)?),
            "paths.input" => self.paths.input = Some(p(v)?),
            "paths.output" => self.paths.output = Some(p(v)?),
            "paths.report" => self.paths.report = Some(p(v)?),
            "paths.classifier" => self.paths.classifier = Some(p(v)?),
            "paths.originals" => self.paths.originals = Some(p(v)?),
            "paths.transferred" => self.paths.transferred = Some(p(v)?),
            "run.seed" => self.seed = num(key, v)?,
            "run.out" => self.out = p(v)?,
            "run.jobs" => self.jobs = num(key, v)?,
            "study.instrument" => self.study.instrument = Some(v.to_string()),
            "study.source" => self.study.source = v.to_string(),
            "study.target" => self.study.target = v.to_string(),
            "study.low" => self.study.low = v.to_string(),
            "study.eval_clips" => self.study.eval_clips = num(key, v)?,
            "study.trials" => self.study.trials = num(key, v)?,
            "study.count" => self.study.count = num(key, v)?,
            "study.cycle_clips" => self.study.cycle_clips = num(key, v)?,
            "study.samples" => self.study.samples = num(key, v)?,
            "study.methods" => self.study.methods = list(key, v)?,
            "study.step_counts" => self.study.step_counts = list(key, v)?,
            "study.shifts" => self.study.shifts = list(key, v)?,
            "study.pairs" => self.study.pairs = pairs(key, v)?,
            "study.configs" => self.study.configs = pairs(key, v)?,
            "study.tops" => self.study.tops = list(key, v)?,
            "study.train_missing" => self.study.train_missing = num(key, v)?,
            "study.analytic" => self.study.analytic = num(key, v)?,
            _ => unreachable!("every key in KEYS is handled"),
        }
        Ok(())
    }

    /// Applies a config file, `key=value` lines with `[section]` headers or a
    /// JSON object.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in parse_config(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Cross-field checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.codec.validate()?;
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        if self.training.batch_size == 0 {
            return bad("training.batch_size", "must be positive");
        }
        if !(self.training.lr > 0.0) {
            return bad("training.lr", "must be positive");
        }
        if self.jobs == 0 {
            return bad("run.jobs", "must be at least 1");
        }
        if let Some(s) = self.solver.inference_sigma {
            if !(s > 0.0) {
                return bad("solver.inference_sigma", "must be positive");
            }
        }
        if self.corpus.clips_per_instrument == 0 {
            return bad("corpus.clips", "must be positive");
        }
        Ok(())
    }

    /// Corpus spec with the run's codec and seed applied.
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            codec: self.codec,
            seed: self.seed,
            ..self.corpus.clone()
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            coupling: self.coupling,
            ..self.training.clone()
        }
    }

    pub fn testbed_config(&self) -> TestbedConfig {
        let mut c = TestbedConfig {
            corpus: self.corpus_spec(),
            training: self.training_config(),
            schedule: self.schedule,
            method: self.solver.method,
            eval_clips: self.study.eval_clips,
            ..TestbedConfig::default()
        };
        c.classifier.seed = self.seed;
        c
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse '{v}': {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

/// `a:b,c:d` pairs.
fn pairs<A: FromStr, B: FromStr>(key: &str, v: &str) -> Result<Vec<(A, B)>>
where
    A::Err: std::fmt::Display,
    B::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| Error::config(key, format!("expected a:b, got '{s}'")))?;
            Ok((num(key, a)?, num(key, b)?))
        })
        .collect()
}

/// Flattens a config file into `(key, value)` pairs in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let mut out = BTreeMap::new();
        flatten_json("", &v, &mut out)?;
        return Ok(out.into_iter().collect());
    }
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = line.strip_prefix('[') {
            section = s
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "unterminated section header"))?
                .trim()
                .to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected key = value, got '{line}'")))?;
        let k = k.trim();
        let key = if section.is_empty() || k.contains('.') { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    use serde_json::Value;
    let scalar = |v: &Value| -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, child, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
            let parts = parts.ok_or_else(|| Error::config(prefix, "arrays must hold scalars"))?;
            out.insert(prefix.to_string(), parts.join(","));
        }
        Value::Null => {}
        other => {
            out.insert(prefix.to_string(), scalar(other).expect("scalar"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_settable_and_bare_names_resolve() {
        assert_eq!(resolve_key("steps").unwrap(), "schedule.steps");
        assert_eq!(resolve_key("sigma-max").unwrap(), "schedule.sigma_max");
        assert_eq!(resolve_key("coupling.enabled").unwrap(), "coupling.enabled");
        assert!(resolve_key("nonsense").is_err());
        for k in KEYS {
            let last = k.rsplit('.').next().unwrap();
            assert_eq!(KEYS.iter().filter(|o| o.ends_with(&format!(".{last}"))).count(), 1, "{k}");
        }
    }

    #[test]
    fn sections_and_json_agree() {
        let ini = "seed = 3\n[schedule]\nsteps = 50 # coarse\n[coupling]\nenabled = true\n[study]\npairs = 100:5, 5:5\n";
        let json = r#"{"seed": 3, "schedule": {"steps": 50}, "coupling": {"enabled": true}, "study": {"pairs": ["100:5", "5:5"]}}"#;
        let mut a = RunConfig::defaults("x");
        for (k, v) in parse_config(ini).unwrap() {
            a.set(&k, &v).unwrap();
        }
        let mut b = RunConfig::defaults("x");
        for (k, v) in parse_config(json).unwrap() {
            b.set(&k, &v).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(a.schedule.n_steps, 50);
        assert_eq!(a.seed, 3);
        assert!(a.coupling.enabled);
        assert_eq!(a.study.pairs, vec![(100.0, 5.0), (5.0, 5.0)]);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = RunConfig::defaults("x");
        match c.set("rho", "abc") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "schedule.rho"),
            other => panic!("{other:?}"),
        }
        match parse_config("[schedule]\nsteps 5") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "line 2"),
            other => panic!("{other:?}"),
        }
    }
}
