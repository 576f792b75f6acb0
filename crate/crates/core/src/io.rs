//! Binary containers for clips and checkpoints.
//!
//! Every file opens with a four-byte magic and a `u32` format version; all
//! integers and floats are little-endian and floats are stored as `f32`.
//!
//! Clip file (`DBCL`, version 1): `u32 channels`, `u32 frames`, then
//! `channels * frames` floats, channel-major.
//!
//! Checkpoint file (`DBCK`, version 1): `u32 kind` followed by a kind-specific
//! body. Kind 1 (denoiser): `u32` channels, base, mid, kernel, noise features
//! and frames; `f32` sigma_min, sigma_max, rho; `u32` steps; `f32` sigma_data;
//! `u64` seed; `u32 C` with `C` means and `C` stds; `u64 P`; `P` raw weights;
//! `P` EMA weights. Kind 2 (classifier): `u32` inputs, hidden, classes; class
//! names as `u32` length plus UTF-8 bytes; `u32 C` with `C` means and `C`
//! stds; `u64 P`; `P` weights.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::clip::{ChannelStats, LatentClip};
use crate::denoiser::{Architecture, NeuralDenoiser};
use crate::error::{Error, Result};
use crate::metrics::TimbreClassifier;
use crate::schedule::ScheduleParams;

pub const CLIP_MAGIC: &[u8; 4] = b"DBCL";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DBCK";
pub const FORMAT_VERSION: u32 = 1;

const KIND_DENOISER: u32 = 1;
const KIND_CLASSIFIER: u32 = 2;

/// Rounds through `f32`, the precision everything is stored at.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f32s(&mut self, v: &[f64]) {
        self.0.reserve(4 * v.len());
        for x in v {
            self.f32(*x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], what: &'a str) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(Error::Format(format!("{what}: missing {} header", String::from_utf8_lossy(magic))));
        }
        let mut d = Self { buf, pos: 4, what };
        let version = d.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!("{what}: unsupported format version {version}")));
        }
        Ok(d)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated file", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: invalid UTF-8", self.what)))
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{}: trailing bytes", self.what)));
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}

pub fn encode_clip(clip: &LatentClip) -> Vec<u8> {
    let mut e = Enc::default();
    e.0.extend_from_slice(CLIP_MAGIC);
    e.u32(FORMAT_VERSION as usize);
    e.u32(clip.channels());
    e.u32(clip.frames());
    e.f32s(clip.data());
    e.0
}

pub fn decode_clip(bytes: &[u8]) -> Result<LatentClip> {
    let mut d = Dec::new(bytes, CLIP_MAGIC, "clip")?;
    let c = d.u32()?;
    let t = d.u32()?;
    let data = d.f32s(c * t)?;
    d.finish()?;
    LatentClip::new(c, t, data)
}

pub fn write_clip(path: &Path, clip: &LatentClip) -> Result<()> {
    write_all(path, &encode_clip(clip))
}

pub fn read_clip(path: &Path) -> Result<LatentClip> {
    decode_clip(&read_all(path)?)
}

fn enc_stats(e: &mut Enc, s: &ChannelStats) {
    e.u32(s.mean.len());
    e.f32s(&s.mean);
    e.f32s(&s.std);
}

fn dec_stats(d: &mut Dec<'_>) -> Result<ChannelStats> {
    let c = d.u32()?;
    let mean = d.f32s(c)?;
    let std = d.f32s(c)?;
    Ok(ChannelStats { mean, std })
}

fn header(kind: u32) -> Enc {
    let mut e = Enc::default();
    e.0.extend_from_slice(CHECKPOINT_MAGIC);
    e.u32(FORMAT_VERSION as usize);
    e.u32(kind as usize);
    e
}

pub fn encode_denoiser(m: &NeuralDenoiser) -> Vec<u8> {
    let mut e = header(KIND_DENOISER);
    let a = &m.arch;
    for v in [a.channels, a.base, a.mid, a.kernel, a.noise_features, m.frames] {
        e.u32(v);
    }
    let s = &m.schedule;
    e.f32(s.sigma_min);
    e.f32(s.sigma_max);
    e.f32(s.rho);
    e.u32(s.n_steps);
    e.f32(s.sigma_data);
    e.u64(m.seed);
    enc_stats(&mut e, &m.stats);
    e.u64(m.params.len() as u64);
    e.f32s(&m.params);
    e.f32s(&m.ema);
    e.0
}

pub fn decode_denoiser(bytes: &[u8]) -> Result<NeuralDenoiser> {
    let mut d = Dec::new(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let kind = d.u32()? as u32;
    if kind != KIND_DENOISER {
        return Err(Error::Format(format!("checkpoint holds kind {kind}, expected a denoiser")));
    }
    let mut u = [0usize; 6];
    for v in &mut u {
        *v = d.u32()?;
    }
    let arch = Architecture {
        channels: u[0],
        base: u[1],
        mid: u[2],
        kernel: u[3],
        noise_features: u[4],
    };
    let (sigma_min, sigma_max, rho) = (d.f32()?, d.f32()?, d.f32()?);
    let n_steps = d.u32()?;
    let sigma_data = d.f32()?;
    let schedule = ScheduleParams::new(sigma_min, sigma_max, rho, n_steps, sigma_data)?;
    let seed = d.u64()?;
    let stats = dec_stats(&mut d)?;
    let p = d.u64()? as usize;
    if p != arch.param_count() {
        return Err(Error::Format(format!("checkpoint has {p} weights, architecture needs {}", arch.param_count())));
    }
    let params = d.f32s(p)?;
    let ema = d.f32s(p)?;
    d.finish()?;
    let mut m = NeuralDenoiser::new(arch, schedule, stats, u[5], seed)?;
    m.params = params;
    m.ema = ema;
    Ok(m)
}

pub fn encode_classifier(c: &TimbreClassifier) -> Vec<u8> {
    let mut e = header(KIND_CLASSIFIER);
    e.u32(c.inputs);
    e.u32(c.hidden);
    e.u32(c.classes.len());
    for name in &c.classes {
        e.str(name);
    }
    enc_stats(&mut e, &c.input_stats);
    e.u64(c.params.len() as u64);
    e.f32s(&c.params);
    e.0
}

pub fn decode_classifier(bytes: &[u8]) -> Result<TimbreClassifier> {
    let mut d = Dec::new(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let kind = d.u32()? as u32;
    if kind != KIND_CLASSIFIER {
        return Err(Error::Format(format!("checkpoint holds kind {kind}, expected a classifier")));
    }
    let inputs = d.u32()?;
    let hidden = d.u32()?;
    let k = d.u32()?;
    let classes = (0..k).map(|_| d.str()).collect::<Result<Vec<_>>>()?;
    let input_stats = dec_stats(&mut d)?;
    let p = d.u64()? as usize;
    let params = d.f32s(p)?;
    d.finish()?;
    TimbreClassifier::from_parts(inputs, hidden, classes, input_stats, params)
}

/// JSON sidecar path for a checkpoint: `model.dbck` to `model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a denoiser checkpoint and its JSON sidecar.
pub fn save_denoiser(path: &Path, m: &NeuralDenoiser) -> Result<()> {
    write_all(path, &encode_denoiser(m))?;
    let meta = serde_json::json!({
        "kind": "denoiser",
        "format_version": FORMAT_VERSION,
        "architecture": m.arch,
        "frames": m.frames,
        "schedule": m.schedule,
        "seed": m.seed,
        "parameters": m.params.len(),
        "stats": m.stats,
    });
    write_all(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_denoiser(path: &Path) -> Result<NeuralDenoiser> {
    decode_denoiser(&read_all(path)?)
}

pub fn save_classifier(path: &Path, c: &TimbreClassifier) -> Result<()> {
    write_all(path, &encode_classifier(c))?;
    let meta = serde_json::json!({
        "kind": "classifier",
        "format_version": FORMAT_VERSION,
        "inputs": c.inputs,
        "hidden": c.hidden,
        "classes": c.classes,
        "parameters": c.params.len(),
    });
    write_all(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_classifier(path: &Path) -> Result<TimbreClassifier> {
    decode_classifier(&read_all(path)?)
}

/// Writes pretty JSON, creating parent directories.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_all(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_all(path)?)?)
}

/// Writes raw bytes, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_all(path, bytes)
}
