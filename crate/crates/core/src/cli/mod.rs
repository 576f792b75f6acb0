//! The `dualbridge` command line: argument parsing, configuration layering,
//! subcommand dispatch and run manifests.

mod commands;
pub mod config;

pub use config::{parse_config, resolve_key, RunConfig, KEYS, OUT_ENV};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Runtime or configuration failure.
pub const EXIT_RUNTIME: i32 = 1;
/// Bad invocation.
pub const EXIT_USAGE: i32 = 2;

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dualbridge", version, about = "Timbre transfer by bridging two diffusion models through a shared noise level")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file (key = value lines with [sections], or JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub sigma_min: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_max: Option<f64>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Noise-grid size N.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub sigma_data: Option<f64>,
    #[arg(long, global = true, value_parser = ["euler", "heun", "rk4"])]
    pub solver: Option<String>,
    #[arg(long, global = true, value_parser = ["forward", "reverse"])]
    pub direction: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $DUALBRIDGE_OUT/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Any config key, e.g. --set coupling.enabled=true.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Args, Default)]
pub struct ModelPair {
    #[arg(long, value_name = "PATH")]
    pub source_ckpt: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub target_ckpt: Option<PathBuf>,
    /// Bridge noise level sigma_{N-1} [default: sigma_max].
    #[arg(long)]
    pub inference_sigma: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TestbedArgs {
    /// Corpus directory from synth-data [default: generate one].
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Directory of testbed checkpoints.
    #[arg(long, value_name = "DIR")]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Test clips per evaluation.
    #[arg(long)]
    pub eval_clips: Option<usize>,
    /// Clips per instrument when generating the corpus.
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    /// Train and save checkpoints that are missing.
    #[arg(long)]
    pub train_missing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-instrument corpus.
    SynthData {
        /// Instrument to include (repeatable).
        #[arg(long)]
        instrument: Vec<String>,
        #[arg(long)]
        clips: Option<usize>,
        /// Instrument whose training clips get random downward shifts (repeatable).
        #[arg(long)]
        augment: Vec<String>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train one instrument's denoiser.
    Train {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        instrument: Option<String>,
        #[arg(long)]
        train_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Transfer clips from the source to the target domain.
    Transfer {
        #[command(flatten)]
        pair: ModelPair,
        /// Clip file or directory of clips.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Transfer there and back, reporting reconstruction errors.
    CycleCheck {
        #[command(flatten)]
        pair: ModelPair,
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// CSV of per-clip reconstruction errors.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Generate from shared latents with both models.
    SampleShared {
        #[command(flatten)]
        pair: ModelPair,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score transferred clips against their originals.
    Eval {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        originals: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        transferred: Option<PathBuf>,
        #[arg(long)]
        target_instrument: Option<String>,
        /// Classifier checkpoint [default: train one on the dataset].
        #[arg(long, value_name = "PATH")]
        classifier: Option<PathBuf>,
    },
    /// Solver orders and distributional error on the analytic mixture pair.
    ConvergenceStudy {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        step_counts: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// DPD and timbre metrics over (sigma_max, sigma_{N-1}) settings.
    SigmaAblation {
        #[command(flatten)]
        testbed: TestbedArgs,
        /// sigma_max:sigma_top pairs, comma separated.
        #[arg(long)]
        pairs: Option<String>,
    },
    /// Metrics for models trained under each chunked coupling.
    CouplingAblation {
        #[command(flatten)]
        testbed: TestbedArgs,
        /// time_chunk:channel_chunk pairs, comma separated.
        #[arg(long)]
        configs: Option<String>,
        #[arg(long, value_delimiter = ',')]
        tops: Vec<f64>,
    },
    /// Inference-time pitch shifts for a register-mismatched pair.
    ShiftStudy {
        #[command(flatten)]
        testbed: TestbedArgs,
        #[arg(long)]
        high: Option<String>,
        #[arg(long)]
        low: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        shifts: Vec<i32>,
        #[arg(long)]
        inference_sigma: Option<f64>,
    },
    /// Melodic agreement of two models sampled from one latent.
    SharedLatent {
        #[command(flatten)]
        testbed: TestbedArgs,
        #[command(flatten)]
        pair: ModelPair,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Cycle reconstruction error against grid size.
    CycleStudy {
        #[command(flatten)]
        testbed: TestbedArgs,
        #[command(flatten)]
        pair: ModelPair,
        #[arg(long, value_delimiter = ',')]
        step_counts: Vec<usize>,
        #[arg(long)]
        cycle_clips: Option<usize>,
        /// Use the analytic mixture pair instead of trained models.
        #[arg(long)]
        analytic: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "synth-data",
            Command::Train { .. } => "train",
            Command::Transfer { .. } => "transfer",
            Command::CycleCheck { .. } => "cycle-check",
            Command::SampleShared { .. } => "sample-shared",
            Command::Eval { .. } => "eval",
            Command::ConvergenceStudy { .. } => "convergence-study",
            Command::SigmaAblation { .. } => "sigma-ablation",
            Command::CouplingAblation { .. } => "coupling-ablation",
            Command::ShiftStudy { .. } => "shift-study",
            Command::SharedLatent { .. } => "shared-latent",
            Command::CycleStudy { .. } => "cycle-study",
        }
    }
}

type Overrides = Vec<(&'static str, String)>;

fn put<T: ToString>(o: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key, v.to_string()));
    }
}

fn put_list<T: ToString>(o: &mut Overrides, key: &'static str, v: &[T]) {
    if !v.is_empty() {
        o.push((key, v.iter().map(T::to_string).collect::<Vec<_>>().join(",")));
    }
}

fn put_path(o: &mut Overrides, key: &'static str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        o.push((key, p.display().to_string()));
    }
}

impl GlobalArgs {
    fn overrides(&self, o: &mut Overrides) {
        put(o, "schedule.sigma_min", &self.sigma_min);
        put(o, "schedule.sigma_max", &self.sigma_max);
        put(o, "schedule.rho", &self.rho);
        put(o, "schedule.steps", &self.steps);
        put(o, "schedule.sigma_data", &self.sigma_data);
        put(o, "solver.method", &self.solver);
        put(o, "solver.direction", &self.direction);
        put(o, "run.seed", &self.seed);
        put_path(o, "run.out", &self.out);
        put(o, "run.jobs", &self.jobs);
    }
}

impl ModelPair {
    fn overrides(&self, o: &mut Overrides) {
        put_path(o, "paths.source_ckpt", &self.source_ckpt);
        put_path(o, "paths.target_ckpt", &self.target_ckpt);
        put(o, "solver.inference_sigma", &self.inference_sigma);
    }
}

impl TestbedArgs {
    fn overrides(&self, o: &mut Overrides) {
        put_path(o, "paths.dataset", &self.dataset);
        put_path(o, "paths.checkpoints", &self.checkpoints);
        put(o, "study.source", &self.source);
        put(o, "study.target", &self.target);
        put(o, "study.eval_clips", &self.eval_clips);
        put(o, "corpus.clips", &self.clips);
        put(o, "training.train_steps", &self.train_steps);
        if self.train_missing {
            o.push(("study.train_missing", "true".into()));
        }
    }
}

impl Command {
    fn overrides(&self, o: &mut Overrides) {
        match self {
            Command::SynthData {
                instrument,
                clips,
                augment,
                test_fraction,
            } => {
                put_list(o, "corpus.instruments", instrument);
                put(o, "corpus.clips", clips);
                put_list(o, "corpus.augment", augment);
                put(o, "corpus.test_fraction", test_fraction);
            }
            Command::Train {
                dataset,
                instrument,
                train_steps,
                lr,
                batch_size,
            } => {
                put_path(o, "paths.dataset", dataset);
                put(o, "study.instrument", instrument);
                put(o, "training.train_steps", train_steps);
                put(o, "training.lr", lr);
                put(o, "training.batch_size", batch_size);
            }
            Command::Transfer { pair, input, output } => {
                pair.overrides(o);
                put_path(o, "paths.input", input);
                put_path(o, "paths.output", output);
            }
            Command::CycleCheck { pair, input, output, report } => {
                pair.overrides(o);
                put_path(o, "paths.input", input);
                put_path(o, "paths.output", output);
                put_path(o, "paths.report", report);
            }
            Command::SampleShared { pair, count } => {
                pair.overrides(o);
                put(o, "study.count", count);
            }
            Command::Eval {
                dataset,
                originals,
                transferred,
                target_instrument,
                classifier,
            } => {
                put_path(o, "paths.dataset", dataset);
                put_path(o, "paths.originals", originals);
                put_path(o, "paths.transferred", transferred);
                put(o, "study.instrument", target_instrument);
                put_path(o, "paths.classifier", classifier);
            }
            Command::ConvergenceStudy { samples, step_counts, methods } => {
                put(o, "study.samples", samples);
                put_list(o, "study.step_counts", step_counts);
                put_list(o, "study.methods", methods);
            }
            Command::SigmaAblation { testbed, pairs } => {
                testbed.overrides(o);
                put(o, "study.pairs", pairs);
            }
            Command::CouplingAblation { testbed, configs, tops } => {
                testbed.overrides(o);
                put(o, "study.configs", configs);
                put_list(o, "study.tops", tops);
            }
            Command::ShiftStudy {
                testbed,
                high,
                low,
                shifts,
                inference_sigma,
            } => {
                testbed.overrides(o);
                put(o, "study.source", high);
                put(o, "study.low", low);
                put_list(o, "study.shifts", shifts);
                put(o, "solver.inference_sigma", inference_sigma);
            }
            Command::SharedLatent { testbed, pair, trials } => {
                testbed.overrides(o);
                pair.overrides(o);
                put(o, "study.trials", trials);
            }
            Command::CycleStudy {
                testbed,
                pair,
                step_counts,
                cycle_clips,
                analytic,
            } => {
                testbed.overrides(o);
                pair.overrides(o);
                put_list(o, "study.step_counts", step_counts);
                put(o, "study.cycle_clips", cycle_clips);
                if *analytic {
                    o.push(("study.analytic", "true".into()));
                }
            }
        }
    }
}

/// Layers defaults, the config file and flags into a validated [`RunConfig`].
pub fn build_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::defaults(cli.command.name());
    if let Some(path) = &cli.global.config {
        if !path.is_file() {
            return Err(Failure::Usage(format!("config file {} does not exist", path.display())));
        }
        cfg.apply_file(path)?;
    }
    let mut o = Overrides::new();
    cli.global.overrides(&mut o);
    cli.command.overrides(&mut o);
    for (k, v) in o {
        cfg.set(k, &v).map_err(usage)?;
    }
    for kv in &cli.global.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v).map_err(usage)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputHash {
    pub path: String,
    pub sha256: String,
}

/// Written as `run_manifest.json` in the output directory of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<OutputHash>,
}

pub fn sha256_file(path: &Path) -> crate::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(cfg: &RunConfig, outputs: &[PathBuf]) -> crate::Result<PathBuf> {
    let outputs = outputs
        .iter()
        .map(|p| {
            let shown = p.strip_prefix(&cfg.out).unwrap_or(p);
            Ok(OutputHash {
                path: shown.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let m = RunManifest {
        tool: "dualbridge".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        format_version: crate::io::FORMAT_VERSION,
        command: cfg.command.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        outputs,
    };
    let path = cfg.out.join("run_manifest.json");
    crate::io::write_json(&path, &m)?;
    Ok(path)
}

/// Runs a validated configuration and writes its manifest.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(&cfg.out)?;
    let outputs = commands::dispatch(cfg)?;
    let manifest = write_manifest(cfg, &outputs)?;
    let mut all = outputs;
    all.push(manifest);
    Ok(all)
}

/// Parses `args`, runs the command and returns the exit status. Messages go
/// to stdout and stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = build_config(&cli).and_then(|cfg| {
        if cli.global.dump_config {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
            return Ok(Vec::new());
        }
        run(&cfg)
    });
    match result {
        Ok(outputs) => {
            let mut stdout = std::io::stdout().lock();
            for p in outputs {
                let _ = writeln!(stdout, "{}", p.display());
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
