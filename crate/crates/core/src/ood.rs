//! OOD gate: nearest-neighbor cosine similarity against the training
//! embeddings, thresholded at a calibrated quantile.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Embedding;
use crate::policy::PolicyModel;

pub const DEFAULT_PERCENTILE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum OodError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("index is empty")]
    EmptyIndex,
    #[error("calibration needs at least one held-out observation")]
    EmptyHeldOut,
    #[error("percentile {0} outside [0, 0.5]")]
    Percentile(f64),
    #[error("index is not calibrated")]
    Uncalibrated,
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub percentile: f64,
    pub held_out: usize,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdIndex {
    dim: usize,
    /// Unit-norm rows; exact duplicates are stored once (they cannot change a
    /// maximum).
    unit: Vec<f64>,
    pub calibration: Option<Calibration>,
}

fn unit(v: &[f64]) -> Result<Vec<f64>, OodError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(OodError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

impl IdIndex {
    pub fn new<'a>(embeddings: impl IntoIterator<Item = &'a [f64]>) -> Result<IdIndex, OodError> {
        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        let mut dim = None;
        for e in embeddings {
            let d = *dim.get_or_insert(e.len());
            assert_eq!(d, e.len(), "embedding dimension mismatch");
            let key: Vec<u64> = e.iter().map(|x| x.to_bits()).collect();
            if seen.insert(key) {
                rows.extend(unit(e)?);
            }
        }
        let dim = dim.ok_or(OodError::EmptyIndex)?;
        Ok(IdIndex {
            dim,
            unit: rows,
            calibration: None,
        })
    }

    /// Index over every training embedding of `model`.
    pub fn from_model(model: &PolicyModel) -> Result<IdIndex, OodError> {
        Self::new((0..model.len()).map(|i| model.embedding(i)))
    }

    pub fn len(&self) -> usize {
        self.unit.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Maximum cosine similarity between `z` and any stored embedding.
    pub fn id_score(&self, z: &Embedding) -> Result<f64, OodError> {
        let q = unit(&z.values)?;
        let best = self
            .unit
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(best.clamp(-1.0, 1.0))
    }

    pub fn threshold(&self) -> Result<f64, OodError> {
        self.calibration
            .as_ref()
            .map(|c| c.threshold)
            .ok_or(OodError::Uncalibrated)
    }

    /// True when the score falls strictly below the threshold.
    pub fn is_ood(&self, z: &Embedding) -> Result<(bool, f64), OodError> {
        let threshold = self.threshold()?;
        let score = self.id_score(z)?;
        Ok((score < threshold, score))
    }

    /// Sets the threshold to the `percentile` quantile of the held-out scores.
    pub fn calibrate(
        &mut self,
        held_out: &[Embedding],
        percentile: f64,
        dataset_hash: &str,
    ) -> Result<f64, OodError> {
        let scores = held_out
            .iter()
            .map(|z| self.id_score(z))
            .collect::<Result<Vec<_>, _>>()?;
        let threshold = quantile(&scores, percentile)?;
        self.calibration = Some(Calibration {
            threshold,
            percentile,
            held_out: scores.len(),
            dataset_hash: dataset_hash.to_string(),
        });
        Ok(threshold)
    }

    pub fn save_calibration(&self, path: &Path) -> Result<(), OodError> {
        let cal = self.calibration.as_ref().ok_or(OodError::Uncalibrated)?;
        let text = serde_json::to_string_pretty(cal).expect("calibration serializes");
        std::fs::write(path, text + "\n").map_err(|e| OodError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_calibration(&mut self, path: &Path) -> Result<(), OodError> {
        let io = |message: String| OodError::Io {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        self.calibration = Some(serde_json::from_str(&text).map_err(|e| io(e.to_string()))?);
        Ok(())
    }
}

/// Linear-interpolation empirical quantile, `p` in [0, 0.5].
pub fn quantile(scores: &[f64], p: f64) -> Result<f64, OodError> {
    if !(0.0..=0.5).contains(&p) {
        return Err(OodError::Percentile(p));
    }
    if scores.is_empty() {
        return Err(OodError::EmptyHeldOut);
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(s[lo] + (s[hi] - s[lo]) * frac)
}
