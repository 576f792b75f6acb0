use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frechet::EmbeddingSet;
use crate::clip::{ChannelStats, LatentClip};
use crate::denoiser::AdamW;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Hidden width; `None` uses half the input width.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            epochs: 400,
            lr: 1e-2,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

/// Two dense layers with a rectifier between them, over standardized
/// time-averaged features.
#[derive(Debug, Clone, PartialEq)]
pub struct TimbreClassifier {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: Vec<String>,
    /// Per-input standardization fitted on the training set.
    pub input_stats: ChannelStats,
    /// `W1 [hidden x inputs]`, `b1`, `W2 [K x hidden]`, `b2`.
    pub params: Vec<f64>,
}

fn param_count(inputs: usize, hidden: usize, k: usize) -> usize {
    hidden * inputs + hidden + k * hidden + k
}

impl TimbreClassifier {
    pub fn from_parts(inputs: usize, hidden: usize, classes: Vec<String>, input_stats: ChannelStats, params: Vec<f64>) -> Result<Self> {
        if params.len() != param_count(inputs, hidden, classes.len()) || input_stats.channels() != inputs {
            return Err(Error::Format("classifier weights do not match its shape".into()));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
            input_stats,
            params,
        })
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::config("target", format!("classifier does not know class '{name}'")))
    }

    fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, x)| (x - self.input_stats.mean[i]) / self.input_stats.std[i])
            .collect()
    }

    /// Hidden activations and logits.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, h, k) = (self.inputs, self.hidden, self.classes.len());
        let p = &self.params;
        let (w1, rest) = p.split_at(h * n);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        let hid: Vec<f64> = (0..h)
            .map(|j| (b1[j] + (0..n).map(|i| w1[j * n + i] * x[i]).sum::<f64>()).max(0.0))
            .collect();
        let logits = (0..k)
            .map(|c| b2[c] + (0..h).map(|j| w2[c * h + j] * hid[j]).sum::<f64>())
            .collect();
        (hid, logits)
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.inputs {
            return Err(Error::Contract(format!("classifier takes {} inputs, got {}", self.inputs, embedding.len())));
        }
        Ok(self.forward(&self.standardize(embedding)).1)
    }

    pub fn predict(&self, embedding: &[f64]) -> Result<usize> {
        let l = self.logits(embedding)?;
        Ok((0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap_or(0))
    }

    /// Class predicted for a raw clip from its time average.
    pub fn predict_clip(&self, clip: &LatentClip) -> Result<usize> {
        self.predict(&clip.time_average())
    }

    /// Fraction of `set` predicted as class `class`.
    pub fn fraction_predicted(&self, set: &EmbeddingSet, class: usize) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Data("empty evaluation set".into()));
        }
        let hits = set
            .vectors
            .iter()
            .map(|v| self.predict(v).map(|p| p == class))
            .collect::<Result<Vec<bool>>>()?;
        Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }

    /// Accuracy against the set's own labels.
    pub fn accuracy(&self, set: &EmbeddingSet) -> Result<f64> {
        let mut right = 0;
        for (v, l) in set.vectors.iter().zip(&set.labels) {
            let l = l.as_deref().ok_or_else(|| Error::Data("unlabelled embedding".into()))?;
            right += usize::from(self.predict(v)? == self.class_index(l)?);
        }
        Ok(right as f64 / set.len().max(1) as f64)
    }
}

/// Trains a classifier by full-batch cross-entropy with the adaptive-moment
/// optimizer. Classes are ordered by first appearance in `train`.
pub fn train_timbre_classifier(train: &EmbeddingSet, config: &ClassifierConfig) -> Result<TimbreClassifier> {
    let mut classes: Vec<String> = Vec::new();
    let mut targets = Vec::with_capacity(train.len());
    for l in &train.labels {
        let l = l.as_deref().ok_or_else(|| Error::Data("classifier training needs labels".into()))?;
        let idx = match classes.iter().position(|c| c == l) {
            Some(i) => i,
            None => {
                classes.push(l.to_string());
                classes.len() - 1
            }
        };
        targets.push(idx);
    }
    let k = classes.len();
    if k < 2 {
        return Err(Error::Data("classifier needs at least two classes".into()));
    }
    for (c, name) in classes.iter().enumerate() {
        if targets.iter().filter(|t| **t == c).count() < 2 {
            return Err(Error::Data(format!("class '{name}' has fewer than 2 examples")));
        }
    }
    let n = train.dim();
    let h = config.hidden.unwrap_or(n / 2).max(1);
    let cols: Vec<LatentClip> = train
        .vectors
        .iter()
        .map(|v| LatentClip::new(n, 1, v.clone()))
        .collect::<Result<_>>()?;
    let input_stats = ChannelStats::from_corpus(&cols)?;
    let mut r = rng::stream(config.seed, "classifier");
    let mut params = vec![0.0; param_count(n, h, k)];
    {
        let b1 = 1.0 / (n as f64).sqrt();
        let b2 = 1.0 / (h as f64).sqrt();
        let (w1, rest) = params.split_at_mut(h * n);
        let (_, rest) = rest.split_at_mut(h);
        let (w2, _) = rest.split_at_mut(k * h);
        w1.iter_mut().for_each(|w| *w = r.random_range(-b1..b1));
        w2.iter_mut().for_each(|w| *w = r.random_range(-b2..b2));
    }
    let mut model = TimbreClassifier {
        inputs: n,
        hidden: h,
        classes,
        input_stats,
        params,
    };
    let xs: Vec<Vec<f64>> = train.vectors.iter().map(|v| model.standardize(v)).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut opt = AdamW::new(model.params.len(), config.lr, 0.9, 0.999, 1e-8, config.weight_decay);
    let mut grads = vec![0.0; model.params.len()];
    for _ in 0..config.epochs {
        order.shuffle(&mut r);
        grads.iter_mut().for_each(|g| *g = 0.0);
        for &s in &order {
            accumulate_grad(&model, &xs[s], targets[s], &mut grads);
        }
        grads.iter_mut().for_each(|g| *g /= xs.len() as f64);
        opt.step(&mut model.params, &grads);
    }
    Ok(model)
}

fn accumulate_grad(m: &TimbreClassifier, x: &[f64], target: usize, grads: &mut [f64]) {
    let (n, h, k) = (m.inputs, m.hidden, m.classes.len());
    let (hid, logits) = m.forward(x);
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = e.iter().sum();
    let dlogit: Vec<f64> = (0..k).map(|c| e[c] / z - f64::from(u8::from(c == target))).collect();
    let w2 = &m.params[h * n + h..h * n + h + k * h];
    let (gw1, rest) = grads.split_at_mut(h * n);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(k * h);
    let mut dhid = vec![0.0; h];
    for c in 0..k {
        gb2[c] += dlogit[c];
        for j in 0..h {
            gw2[c * h + j] += dlogit[c] * hid[j];
            dhid[j] += dlogit[c] * w2[c * h + j];
        }
    }
    for j in 0..h {
        if hid[j] <= 0.0 {
            continue;
        }
        gb1[j] += dhid[j];
        for i in 0..n {
            gw1[j * n + i] += dhid[j] * x[i];
        }
    }
}
