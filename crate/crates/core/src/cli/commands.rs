use std::io::Write;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};

use super::{Failure, RunConfig};
use crate::bridge::{cycle, sample_shared, transfer, BridgeConfig};
use crate::clip::LatentClip;
use crate::coupling::CouplingConfig;
use crate::denoiser::{train, NeuralDenoiser};
use crate::error::Error;
use crate::experiments::{
    convergence_study, coupling_ablation, cycle_study, pitch_shift_study, shared_latent_study, sigma_ablation, ConvergenceConfig,
    CycleConfig, GmmPair, ModelKey, SharedLatentConfig, StudyOutput, Testbed,
};
use crate::io;
use crate::metrics::{evaluate_transfer, train_timbre_classifier, ClassifierConfig, EmbeddingSet, PitchExtractor};
use crate::rng;
use crate::synth::{generate_corpus, Corpus, Split};

type Outcome = Result<Vec<PathBuf>, Failure>;

pub(super) fn dispatch(cfg: &RunConfig) -> Outcome {
    match cfg.command.as_str() {
        "synth-data" => synth_data(cfg),
        "train" => train_cmd(cfg),
        "transfer" => transfer_cmd(cfg, false),
        "cycle-check" => transfer_cmd(cfg, true),
        "sample-shared" => sample_shared_cmd(cfg),
        "eval" => eval_cmd(cfg),
        "convergence-study" => convergence_cmd(cfg),
        "sigma-ablation" => sigma_cmd(cfg),
        "coupling-ablation" => coupling_cmd(cfg),
        "shift-study" => shift_cmd(cfg),
        "shared-latent" => shared_cmd(cfg),
        "cycle-study" => cycle_cmd(cfg),
        other => Err(Failure::Usage(format!("unknown command '{other}'"))),
    }
}

/// A path option that must be given and exist.
fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    match p {
        None => Err(Failure::Usage(format!("{key} is required"))),
        Some(p) if !p.exists() => Err(Failure::Usage(format!("{key}: {} does not exist", p.display()))),
        Some(p) => Ok(p),
    }
}

fn require_str<'a>(v: &'a Option<String>, key: &str) -> Result<&'a str, Failure> {
    v.as_deref().ok_or_else(|| Failure::Usage(format!("{key} is required")))
}

/// A clip file, or every `.dbcl` file of a directory in name order.
fn clip_files(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "dbcl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::config("paths.input", format!("no .dbcl clips in {}", path.display())).into());
    }
    Ok(files)
}

fn read_clips(files: &[PathBuf]) -> Result<Vec<LatentClip>, Failure> {
    Ok(files.iter().map(|f| io::read_clip(f)).collect::<crate::Result<_>>()?)
}

fn synth_data(cfg: &RunConfig) -> Outcome {
    let corpus = generate_corpus(&cfg.corpus_spec())?;
    corpus.write(&cfg.out)?;
    let mut out: Vec<PathBuf> = corpus.manifest.records.iter().map(|r| cfg.out.join(&r.file)).collect();
    out.push(cfg.out.join("stats.json"));
    out.push(cfg.out.join("manifest.json"));
    Ok(out)
}

fn train_cmd(cfg: &RunConfig) -> Outcome {
    let dataset = require(&cfg.paths.dataset, "paths.dataset")?;
    let instrument = require_str(&cfg.study.instrument, "study.instrument")?;
    let corpus = Corpus::read(dataset)?;
    let data = corpus.normalized(instrument, Split::Train)?;
    let (model, report) = train(&data, &corpus.stats, cfg.schedule, &cfg.training_config())?;
    log::info!("{instrument}: final loss {:.4} after {} steps", report.final_loss, cfg.training.steps);
    let ckpt = cfg.paths.output.clone().unwrap_or_else(|| cfg.out.join(format!("{instrument}.dbck")));
    if let Some(dir) = ckpt.parent() {
        std::fs::create_dir_all(dir)?;
    }
    io::save_denoiser(&ckpt, &model)?;
    let log_path = cfg.out.join(format!("{instrument}.training.json"));
    io::write_json(&log_path, &report)?;
    Ok(vec![ckpt.clone(), io::sidecar_path(&ckpt), log_path])
}

fn load_pair(cfg: &RunConfig) -> Result<(NeuralDenoiser, NeuralDenoiser), Failure> {
    let a = io::load_denoiser(require(&cfg.paths.source_ckpt, "paths.source_ckpt")?)?;
    let b = io::load_denoiser(require(&cfg.paths.target_ckpt, "paths.target_ckpt")?)?;
    Ok((a, b))
}

/// Bridge over the source model's schedule resized to the run's grid.
fn bridge<'a>(cfg: &RunConfig, a: &'a NeuralDenoiser, b: &'a NeuralDenoiser) -> crate::Result<BridgeConfig<'a>> {
    let s = a.schedule.with_steps(cfg.schedule.n_steps)?;
    BridgeConfig::new(a, b, s, cfg.solver.inference_sigma.unwrap_or(s.sigma_max), cfg.solver.method, false)
}

fn transfer_cmd(cfg: &RunConfig, round_trip: bool) -> Outcome {
    let (a, b) = load_pair(cfg)?;
    let input = require(&cfg.paths.input, "paths.input")?;
    let bc = bridge(cfg, &a, &b)?;
    let files = clip_files(input)?;
    let clips = read_clips(&files)?;
    let single = input.is_file();
    let default_name = if round_trip { "cycled" } else { "transferred" };
    let target = cfg.paths.output.clone().unwrap_or_else(|| {
        if single {
            cfg.out.join(input.file_name().expect("file name"))
        } else {
            cfg.out.join(default_name)
        }
    });
    let mut written = Vec::new();
    let mut errors = Vec::new();
    for (f, clip) in files.iter().zip(&clips) {
        let x = a.stats.normalize(clip)?;
        let raw = if round_trip {
            let y = cycle(&x, &bc)?;
            errors.push(y.normalized_distance(&x));
            a.stats.denormalize(&y)?
        } else {
            b.stats.denormalize(&transfer(&x, &bc)?)?
        };
        let path = if single { target.clone() } else { target.join(f.file_name().expect("file name")) };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        io::write_clip(&path, &raw)?;
        written.push(path);
    }
    if round_trip {
        let report = cfg.paths.report.clone().unwrap_or_else(|| cfg.out.join("cycle_report.csv"));
        let mut w = csv::Writer::from_path(&report).map_err(Error::from)?;
        w.write_record(["clip", "normalized_l2"]).map_err(Error::from)?;
        for (f, e) in files.iter().zip(&errors) {
            w.write_record([f.file_name().unwrap_or_default().to_string_lossy().to_string(), e.to_string()])
                .map_err(Error::from)?;
        }
        w.flush()?;
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        log::info!("mean cycle error {mean:.4e} over {} clips", errors.len());
        written.push(report);
    }
    Ok(written)
}

fn sample_shared_cmd(cfg: &RunConfig) -> Outcome {
    let (a, b) = load_pair(cfg)?;
    let bc = bridge(cfg, &a, &b)?;
    let top = bc.top_sigma();
    let (c, t) = (a.arch.channels, a.frames);
    let mut out = Vec::new();
    for i in 0..cfg.study.count {
        let mut r = rng::indexed(cfg.seed, "sample-shared", i as u64);
        let z = LatentClip::new(
            c,
            t,
            (0..c * t).map(|_| top * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect(),
        )?;
        for (tag, m) in [("a", &a), ("b", &b)] {
            let y = m.stats.denormalize(&sample_shared(&z, m, &bc)?)?;
            let path = cfg.out.join(format!("shared-{i:03}-{tag}.dbcl"));
            io::write_clip(&path, &y)?;
            out.push(path);
        }
    }
    Ok(out)
}

fn eval_cmd(cfg: &RunConfig) -> Outcome {
    let dataset = require(&cfg.paths.dataset, "paths.dataset")?;
    let originals = clip_files(require(&cfg.paths.originals, "paths.originals")?)?;
    let transferred = clip_files(require(&cfg.paths.transferred, "paths.transferred")?)?;
    let target = require_str(&cfg.study.instrument, "study.instrument")?;
    let corpus = Corpus::read(dataset)?;
    let mut out = Vec::new();
    let classifier = match &cfg.paths.classifier {
        Some(p) => io::load_classifier(require(&Some(p.clone()), "paths.classifier")?)?,
        None => {
            let train_set = EmbeddingSet::from_clips(corpus.instruments().iter().flat_map(|i| corpus.select(i, Split::Train)))?;
            let c = train_timbre_classifier(&train_set, &ClassifierConfig { seed: cfg.seed, ..ClassifierConfig::default() })?;
            let path = cfg.out.join("classifier.dbck");
            io::save_classifier(&path, &c)?;
            out.push(path);
            c
        }
    };
    let reference: Vec<LatentClip> = corpus.select(target, Split::Test).into_iter().cloned().collect();
    let extractor = PitchExtractor::new(*corpus.codec())?;
    let eval = evaluate_transfer(&read_clips(&originals)?, &read_clips(&transferred)?, &reference, &classifier, target, &extractor)?;
    let metrics = cfg.out.join("metrics.json");
    io::write_json(&metrics, &eval.report)?;
    let pairs = cfg.out.join("pairs.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&pairs)?);
    eval.write_pairs_csv(&mut f)?;
    f.flush()?;
    out.push(metrics);
    out.push(pairs);
    Ok(out)
}

fn convergence_cmd(cfg: &RunConfig) -> Outcome {
    let mut c = ConvergenceConfig {
        methods: cfg.study.methods.clone(),
        n_samples: cfg.study.samples,
        schedule: cfg.schedule,
        seed: cfg.seed,
        ..ConvergenceConfig::default()
    };
    if !cfg.study.step_counts.is_empty() {
        c.step_counts = cfg.study.step_counts.clone();
    }
    let report = convergence_study(&GmmPair::standard(), &c)?;
    let _ = write!(std::io::stdout(), "{}", report.summary());
    Ok(report.write_to(&cfg.out)?)
}

/// Testbed with the corpus from `paths.dataset` or freshly generated.
fn testbed(cfg: &RunConfig) -> Result<Testbed, Failure> {
    let corpus = match &cfg.paths.dataset {
        Some(_) => Corpus::read(require(&cfg.paths.dataset, "paths.dataset")?)?,
        None => generate_corpus(&cfg.corpus_spec())?,
    };
    Ok(Testbed::from_corpus(cfg.testbed_config(), corpus)?)
}

/// Loads each key from the checkpoint directory, training missing ones when
/// asked to.
fn provide(cfg: &RunConfig, tb: &mut Testbed, keys: &[ModelKey]) -> Result<Vec<PathBuf>, Failure> {
    let dir = cfg.paths.checkpoints.clone().unwrap_or_else(|| cfg.out.join("checkpoints"));
    let mut trained = Vec::new();
    for k in keys {
        if tb.load_model(k, &dir)? {
            continue;
        }
        if !cfg.study.train_missing {
            return Err(Error::config(
                "paths.checkpoints",
                format!("missing checkpoint {} (pass --train-missing to train it)", k.checkpoint_path(&dir).display()),
            )
            .into());
        }
        let m = tb.ensure_model(k)?.model.clone();
        std::fs::create_dir_all(&dir)?;
        let path = k.checkpoint_path(&dir);
        io::save_denoiser(&path, &m)?;
        // Studies run on the stored (f32) weights whether trained now or earlier.
        tb.load_model(k, &dir)?;
        trained.push(path);
    }
    Ok(trained)
}

fn finish(cfg: &RunConfig, study: &impl StudyOutput, mut trained: Vec<PathBuf>) -> Outcome {
    let _ = write!(std::io::stdout(), "{}", study.summary());
    trained.extend(study.write_to(&cfg.out)?);
    Ok(trained)
}

fn sigma_cmd(cfg: &RunConfig) -> Outcome {
    let mut tb = testbed(cfg)?;
    let s = &cfg.study;
    let keys: Vec<ModelKey> = s
        .pairs
        .iter()
        .flat_map(|(smax, _)| [ModelKey::new(&s.source, *smax), ModelKey::new(&s.target, *smax)])
        .collect();
    let trained = provide(cfg, &mut tb, &keys)?;
    let study = sigma_ablation(&tb, &s.source, &s.target, &s.pairs)?;
    finish(cfg, &study, trained)
}

fn coupling_cmd(cfg: &RunConfig) -> Outcome {
    let mut tb = testbed(cfg)?;
    let s = &cfg.study;
    let smax = cfg.schedule.sigma_max;
    let configs: Vec<CouplingConfig> = s.configs.iter().map(|(t, c)| CouplingConfig::chunked(*t, *c)).collect();
    let keys: Vec<ModelKey> = configs
        .iter()
        .flat_map(|c| [ModelKey::new(&s.source, smax).with_coupling(*c), ModelKey::new(&s.target, smax).with_coupling(*c)])
        .collect();
    let trained = provide(cfg, &mut tb, &keys)?;
    let study = coupling_ablation(&tb, &s.source, &s.target, smax, &configs, &s.tops)?;
    finish(cfg, &study, trained)
}

fn shift_cmd(cfg: &RunConfig) -> Outcome {
    let mut tb = testbed(cfg)?;
    let s = &cfg.study;
    let smax = cfg.schedule.sigma_max;
    let keys = [ModelKey::new(&s.source, smax), ModelKey::new(&s.low, smax)];
    let trained = provide(cfg, &mut tb, &keys)?;
    let study = pitch_shift_study(&tb, &s.source, &s.low, &s.shifts, cfg.solver.inference_sigma.unwrap_or(smax))?;
    finish(cfg, &study, trained)
}

fn shared_cmd(cfg: &RunConfig) -> Outcome {
    let mut tb = testbed(cfg)?;
    let s = &cfg.study;
    let smax = cfg.schedule.sigma_max;
    let (a, b, trained) = if cfg.paths.source_ckpt.is_some() || cfg.paths.target_ckpt.is_some() {
        let (a, b) = load_pair(cfg)?;
        (a, b, Vec::new())
    } else {
        let keys = [ModelKey::new(&s.source, smax), ModelKey::new(&s.target, smax)];
        let trained = provide(cfg, &mut tb, &keys)?;
        (tb.model(&keys[0])?.model.clone(), tb.model(&keys[1])?.model.clone(), trained)
    };
    let threshold = tb.similarity_threshold(&s.source, &s.target)?;
    let config = SharedLatentConfig {
        n_trials: s.trials,
        sigma_top: cfg.solver.inference_sigma.unwrap_or(a.schedule.sigma_max),
        method: cfg.solver.method,
        seed: cfg.seed,
    };
    let study = shared_latent_study(&a, &b, &tb.extractor, threshold, &config)?;
    finish(cfg, &study, trained)
}

fn cycle_cmd(cfg: &RunConfig) -> Outcome {
    let s = &cfg.study;
    let counts = if s.step_counts.is_empty() { vec![25, 50, 100, 200] } else { s.step_counts.clone() };
    let mut config = CycleConfig {
        step_counts: counts,
        method: cfg.solver.method,
        schedule: cfg.schedule,
        top_sigma: cfg.solver.inference_sigma,
    };
    if s.analytic {
        let pair = GmmPair::standard();
        let mut r = rng::stream(cfg.seed, "cycle-study/points");
        let clips = pair
            .source
            .sample_n(s.cycle_clips, &mut r)
            .iter()
            .map(|p| LatentClip::from_point(p))
            .collect::<crate::Result<Vec<_>>>()?;
        let curve = cycle_study(&pair.source, &pair.target, &clips, &config)?;
        return finish(cfg, &curve, Vec::new());
    }
    let mut tb = testbed(cfg)?;
    let smax = cfg.schedule.sigma_max;
    let (a, b, trained) = if cfg.paths.source_ckpt.is_some() || cfg.paths.target_ckpt.is_some() {
        let (a, b) = load_pair(cfg)?;
        (a, b, Vec::new())
    } else {
        let keys = [ModelKey::new(&s.source, smax), ModelKey::new(&s.target, smax)];
        let trained = provide(cfg, &mut tb, &keys)?;
        (tb.model(&keys[0])?.model.clone(), tb.model(&keys[1])?.model.clone(), trained)
    };
    config.schedule = a.schedule;
    let clips: Vec<LatentClip> = tb
        .corpus
        .select(&s.source, Split::Test)
        .into_iter()
        .take(s.cycle_clips)
        .map(|c| a.stats.normalize(c))
        .collect::<crate::Result<_>>()?;
    let curve = cycle_study(&a, &b, &clips, &config)?;
    finish(cfg, &curve, trained)
}
