use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::clip::LatentClip;
use crate::error::{Error, Result};

/// Time-averaged clip features with optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<Option<String>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let labels = vec![None; vectors.len()];
        Self::labelled(vectors, labels)
    }

    pub fn labelled(vectors: Vec<Vec<f64>>, labels: Vec<Option<String>>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Contract("one label per vector".into()));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::Contract("embedding vectors differ in dimension".into()));
            }
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding contains a non-finite value".into()));
        }
        Ok(Self { vectors, labels })
    }

    /// Time averages of raw clips, labelled by their domain label.
    pub fn from_clips<'a, I: IntoIterator<Item = &'a LatentClip>>(clips: I) -> Result<Self> {
        let (vectors, labels) = clips
            .into_iter()
            .map(|c| (c.time_average(), c.domain_label.clone()))
            .unzip();
        Self::labelled(vectors, labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Sample mean and unbiased covariance; adds `1e-6 I` when `M <= C`.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.len();
        if m < 2 {
            return Err(Error::Data(format!("Fréchet distance needs at least 2 vectors, got {m}")));
        }
        let c = self.dim();
        let mut mean = DVector::zeros(c);
        for v in &self.vectors {
            mean += DVector::from_column_slice(v);
        }
        mean /= m as f64;
        let mut cov = DMatrix::zeros(c, c);
        for v in &self.vectors {
            let d = DVector::from_column_slice(v) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (m - 1) as f64;
        if m <= c {
            cov += DMatrix::identity(c, c) * 1e-6;
        }
        Ok((mean, cov))
    }
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_from_moments(mu_a: &DVector<f64>, s_a: &DMatrix<f64>, mu_b: &DVector<f64>, s_b: &DMatrix<f64>) -> Result<f64> {
    if mu_a.len() != mu_b.len() || s_a.shape() != s_b.shape() || s_a.nrows() != mu_a.len() {
        return Err(Error::Contract("moment dimensions disagree".into()));
    }
    let root_a = sym_sqrt(s_a);
    let inner = &root_a * s_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let mean_term = (mu_a - mu_b).norm_squared();
    let value = mean_term + s_a.trace() + s_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of two embedding sets.
pub fn frechet(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("embedding dims {} and {}", a.dim(), b.dim())));
    }
    let (ma, sa) = a.moments()?;
    let (mb, sb) = b.moments()?;
    frechet_from_moments(&ma, &sa, &mb, &sb)
}
