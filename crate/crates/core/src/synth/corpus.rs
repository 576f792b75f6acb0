use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{FeatureCodec, FeatureCodecSpec};
use super::instrument::{synth, synth_shifted, InstrumentSpec};
use super::melody::{apply_shift_augmentation, gen_melody, Melody, ShiftPolicy};
use crate::clip::{ChannelStats, LatentClip};
use crate::error::{Error, Result};
use crate::io;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub instruments: Vec<String>,
    pub clips_per_instrument: usize,
    /// Fraction of each instrument's clips held out for evaluation.
    pub test_fraction: f64,
    pub seed: u64,
    pub notes_per_clip: usize,
    /// Beats per minute.
    pub tempo_range: (f64, f64),
    /// Instruments whose training clips receive random downward shifts.
    pub augmented: Vec<String>,
    pub augmentation: ShiftPolicy,
    pub codec: FeatureCodecSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            instruments: vec!["flute".into(), "violin".into()],
            clips_per_instrument: 400,
            test_fraction: 0.25,
            seed: 0,
            notes_per_clip: 6,
            tempo_range: (180.0, 220.0),
            augmented: Vec::new(),
            augmentation: ShiftPolicy::default(),
            codec: FeatureCodecSpec::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(Error::config("instruments", "at least one instrument is required"));
        }
        if self.clips_per_instrument == 0 {
            return Err(Error::config("clips", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("test_fraction", "must lie in [0, 1)"));
        }
        for a in &self.augmented {
            if !self.instruments.contains(a) {
                return Err(Error::config("augmented", format!("'{a}' is not generated")));
            }
        }
        self.augmentation.validate()?;
        self.codec.validate()
    }

    fn test_count(&self) -> usize {
        (self.clips_per_instrument as f64 * self.test_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub instrument: String,
    /// The melody as written, before any augmentation shift.
    pub melody: Melody,
    /// Semitone shift applied by augmentation.
    pub shift: Option<i32>,
    pub split: Split,
    /// Clip file relative to the corpus directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: CorpusSpec,
    pub records: Vec<ClipRecord>,
}

/// Generated clips (raw log band energies) with their manifest and the frozen
/// statistics of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub clips: Vec<LatentClip>,
    pub stats: ChannelStats,
}

/// Seed of the melody for clip `index` of `instrument`.
fn melody_seed(seed: u64, instrument: &str, index: usize) -> u64 {
    rng::split_seed(seed, &format!("melody/{instrument}/{index}"))
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let codec = FeatureCodec::new(spec.codec)?;
    let n_test = spec.test_count();
    let mut records = Vec::new();
    let mut clips = Vec::new();
    for name in &spec.instruments {
        let inst = InstrumentSpec::builtin(name)?;
        let augment = spec.augmented.contains(name);
        for i in 0..spec.clips_per_instrument {
            let split = if i < n_test { Split::Test } else { Split::Train };
            let melody = gen_melody(melody_seed(spec.seed, name, i), inst.register, spec.notes_per_clip, spec.tempo_range)?;
            let shift = if augment && split == Split::Train {
                let mut r = rng::indexed(spec.seed, &format!("augment/{name}"), i as u64);
                apply_shift_augmentation(&melody, &mut r, &spec.augmentation)?.1
            } else {
                None
            };
            let wave = match shift {
                Some(s) => synth_shifted(&melody, s, &inst, &spec.codec)?,
                None => synth(&melody, &inst, &spec.codec)?,
            };
            let f = codec.features(&wave)?;
            let f = f.map_data(f.data().iter().map(|v| io::quantize(*v)).collect()).with_label(name.clone());
            let id = format!("{name}-{i:05}");
            records.push(ClipRecord {
                file: format!("clips/{id}.dbcl"),
                id,
                instrument: name.clone(),
                melody,
                shift,
                split,
            });
            clips.push(f);
        }
    }
    let train: Vec<&LatentClip> = records
        .iter()
        .zip(&clips)
        .filter(|(r, _)| r.split == Split::Train)
        .map(|(_, c)| c)
        .collect();
    let train = if train.is_empty() { clips.iter().collect() } else { train };
    let stats = ChannelStats::from_corpus(train)?;
    Ok(Corpus {
        manifest: Manifest {
            format: "dualbridge-corpus".into(),
            version: io::FORMAT_VERSION,
            spec: spec.clone(),
            records,
        },
        clips,
        stats,
    })
}

impl Corpus {
    /// Raw clips of one instrument and split, in manifest order.
    pub fn select<'a>(&'a self, instrument: &'a str, split: Split) -> Vec<&'a LatentClip> {
        self.entries(instrument, split).map(|(_, c)| c).collect()
    }

    pub fn entries<'a>(&'a self, instrument: &'a str, split: Split) -> impl Iterator<Item = (&'a ClipRecord, &'a LatentClip)> + 'a {
        self.manifest
            .records
            .iter()
            .zip(&self.clips)
            .filter(move |(r, _)| r.instrument == instrument && r.split == split)
    }

    /// Clips of one instrument and split after corpus normalization.
    pub fn normalized(&self, instrument: &str, split: Split) -> Result<Vec<LatentClip>> {
        let out: Vec<LatentClip> = self
            .select(instrument, split)
            .into_iter()
            .map(|c| self.stats.normalize(c))
            .collect::<Result<_>>()?;
        if out.is_empty() {
            return Err(Error::config("instrument", format!("no {split:?} clips of '{instrument}' in the corpus")));
        }
        Ok(out)
    }

    pub fn instruments(&self) -> &[String] {
        &self.manifest.spec.instruments
    }

    pub fn codec(&self) -> &FeatureCodecSpec {
        &self.manifest.spec.codec
    }

    /// Writes `manifest.json`, `stats.json` and `clips/*.dbcl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("clips"))?;
        for (r, c) in self.manifest.records.iter().zip(&self.clips) {
            io::write_clip(&dir.join(&r.file), c)?;
        }
        io::write_json(&dir.join("stats.json"), &self.stats)?;
        io::write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = io::read_json(&dir.join("manifest.json"))?;
        if manifest.format != "dualbridge-corpus" || manifest.version != io::FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: not a version {} corpus manifest",
                dir.display(),
                io::FORMAT_VERSION
            )));
        }
        let stats: ChannelStats = io::read_json(&dir.join("stats.json"))?;
        let clips = manifest
            .records
            .iter()
            .map(|r| Ok(io::read_clip(&dir.join(&r.file))?.with_label(r.instrument.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, clips, stats })
    }
}
