//! Nonparametric multimodal imitator: a locally weighted sampler over the
//! encoded training pairs.
//!
//! Given a query embedding, the `k` nearest training embeddings (Euclidean)
//! are weighted by `exp(-(d - d_min) / temperature)` and one is drawn; its plan is
//! returned with Gaussian noise added per component. Anything that offers
//! `encode` + `sample_plan` over embeddings can stand in for this model.
//!
//! Models persist as `.pmod` files: an 8-byte magic, a little-endian u32
//! version, a u64-length-prefixed JSON header, then little-endian f64
//! embeddings (rows), f64 plans (rows of `plan_len * 3`), u16 mode indices
//! and u32 pairs of observation references.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoder::{encode, EncoderConfig};
use crate::model::{
    squared_distance, Action, ActionPlan, Dataset, Embedding, ObsRef, ACTION_BOUND,
};
use crate::rng;

pub const DEFAULT_K: usize = 8;
/// Softness as a fraction of the median pairwise training distance.
pub const DEFAULT_TAU_FRACTION: f64 = 0.05;
/// Action noise as a fraction of the action bound.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

const MAGIC: &[u8; 8] = b"ABAPMOD\0";
const VERSION: u32 = 1;
/// Training embeddings sampled when estimating the median pairwise distance.
const MEDIAN_SAMPLE: usize = 600;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot fit a policy to an empty dataset")]
    EmptyDataset,
    #[error("invalid policy parameter: {0}")]
    InvalidParameter(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub k: usize,
    /// None picks `DEFAULT_TAU_FRACTION` of the median pairwise distance.
    pub temperature: Option<f64>,
    pub noise: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            temperature: None,
            noise: DEFAULT_NOISE_FRACTION * ACTION_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub encoder: EncoderConfig,
    pub k: usize,
    pub temperature: f64,
    pub noise: f64,
    pub plan_len: usize,
    pub mode_names: Vec<String>,
    pub dataset_hash: String,
    embeddings: Vec<f64>,
    plans: Vec<ActionPlan>,
    modes: Vec<u16>,
    refs: Vec<ObsRef>,
}

/// A drawn plan and the training pair it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub plan: ActionPlan,
    pub index: usize,
}

pub fn fit_policy(
    dataset: &Dataset,
    encoder: EncoderConfig,
    params: PolicyParams,
) -> Result<PolicyModel, PolicyError> {
    if dataset.pair_count() == 0 {
        return Err(PolicyError::EmptyDataset);
    }
    encoder.validate().map_err(PolicyError::InvalidParameter)?;
    if params.k == 0 {
        return Err(PolicyError::InvalidParameter("k must be positive".into()));
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(PolicyError::InvalidParameter(
            "noise must be finite and >= 0".into(),
        ));
    }
    let mode_names = dataset.mode_labels();
    let dim = encoder.dim();
    let mut embeddings = Vec::with_capacity(dataset.pair_count() * dim);
    let mut plans = Vec::with_capacity(dataset.pair_count());
    let mut modes = Vec::with_capacity(dataset.pair_count());
    let mut refs = Vec::with_capacity(dataset.pair_count());
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        let mode = mode_names
            .iter()
            .position(|m| *m == traj.mode_label)
            .expect("mode collected above") as u16;
        for (oi, (_, plan)) in traj.pairs.iter().enumerate() {
            let r = ObsRef {
                trajectory: ti as u32,
                timestep: oi as u32,
            };
            embeddings.extend(encode(&dataset.history(r, encoder.history), &encoder).values);
            plans.push(plan.clone());
            modes.push(mode);
            refs.push(r);
        }
    }
    let n = plans.len();
    let mut model = PolicyModel {
        encoder,
        k: params.k.min(n),
        temperature: 0.0,
        noise: params.noise,
        plan_len: dataset.plan_len,
        mode_names,
        dataset_hash: dataset.config_hash.clone(),
        embeddings,
        plans,
        modes,
        refs,
    };
    model.temperature = match params.temperature {
        Some(t) if t >= 0.0 && t.is_finite() => t,
        Some(t) => return Err(PolicyError::InvalidParameter(format!("temperature {t}"))),
        None => DEFAULT_TAU_FRACTION * model.median_pairwise_distance(),
    };
    Ok(model)
}

impl PolicyModel {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.embeddings[i * d..(i + 1) * d]
    }

    pub fn plan(&self, i: usize) -> &ActionPlan {
        &self.plans[i]
    }

    pub fn mode_of(&self, i: usize) -> &str {
        &self.mode_names[self.modes[i] as usize]
    }

    pub fn obs_ref(&self, i: usize) -> ObsRef {
        self.refs[i]
    }

    /// Index of the training pair for a dataset observation.
    pub fn index_of(&self, r: ObsRef) -> Option<usize> {
        self.refs.binary_search(&r).ok()
    }

    /// Median Euclidean distance over pairs of a strided subsample.
    fn median_pairwise_distance(&self) -> f64 {
        let n = self.len();
        let stride = n.div_ceil(MEDIAN_SAMPLE).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                d.push(squared_distance(self.embedding(i), self.embedding(j)).sqrt());
            }
        }
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        if m % 2 == 1 {
            d[m / 2]
        } else {
            0.5 * (d[m / 2 - 1] + d[m / 2])
        }
    }

    /// The k nearest training pairs as (index, distance), nearest first,
    /// ties by index.
    pub fn neighbors(&self, z: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(z.len(), self.dim(), "embedding dimension mismatch");
        let mut all: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, squared_distance(z, self.embedding(i))))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        let k = self.k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_by(cmp);
        all.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    /// Selection probabilities over `neighbors(z)`. With `temperature == 0` the
    /// nearest ties share the mass uniformly.
    pub fn weights(&self, neighbors: &[(usize, f64)]) -> Vec<f64> {
        let dmin = neighbors.first().map_or(0.0, |n| n.1);
        let raw: Vec<f64> = neighbors
            .iter()
            .map(|&(_, d)| {
                if self.temperature > 0.0 {
                    (-(d - dmin) / self.temperature).exp()
                } else if d == dmin {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Samples a plan with the model's own action noise.
    pub fn sample_plan(&self, z: &Embedding, seed: u64) -> ActionPlan {
        self.sample_with_noise(z, self.noise, seed).plan
    }

    pub fn sample_with_noise(&self, z: &Embedding, noise: f64, seed: u64) -> Sample {
        let neighbors = self.neighbors(&z.values);
        let weights = self.weights(&neighbors);
        let mut rng = rng::rng(seed);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = neighbors.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let index = neighbors[pick].0;
        let mut plan = self.plans[index].clone();
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).expect("finite noise");
            for a in &mut plan.steps {
                *a = Action::new(
                    a.dx + normal.sample(&mut rng),
                    a.dy + normal.sample(&mut rng),
                    a.dgripper + normal.sample(&mut rng),
                )
                .clamped();
            }
        }
        Sample { plan, index }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let io = |source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        };
        let header = Header {
            encoder: self.encoder,
            k: self.k,
            temperature: self.temperature,
            noise: self.noise,
            plan_len: self.plan_len,
            mode_names: self.mode_names.clone(),
            dataset_hash: self.dataset_hash.clone(),
            entries: self.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(16 + json.len() + self.embeddings.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for v in &self.embeddings {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.plans {
            for a in &p.steps {
                for v in [a.dx, a.dy, a.dgripper] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for m in &self.modes {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        for r in &self.refs {
            buf.extend_from_slice(&r.trajectory.to_le_bytes());
            buf.extend_from_slice(&r.timestep.to_le_bytes());
        }
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
        tmp.write_all(&buf).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyModel, PolicyError> {
        let bad = |message: String| PolicyError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| PolicyError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(8).map_err(&bad)? != MAGIC {
            return Err(bad("not a policy model file".into()));
        }
        let version = u32::from_le_bytes(cur.array().map_err(&bad)?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(cur.array().map_err(&bad)?) as usize;
        let header: Header = serde_json::from_slice(cur.take(hlen).map_err(&bad)?)
            .map_err(|e| bad(e.to_string()))?;
        header.encoder.validate().map_err(&bad)?;
        let n = header.entries;
        let dim = header.encoder.dim();
        let mut embeddings = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            embeddings.push(f64::from_le_bytes(cur.array().map_err(&bad)?));
        }
        let mut plans = Vec::with_capacity(n);
        for _ in 0..n {
            let mut steps = Vec::with_capacity(header.plan_len);
            for _ in 0..header.plan_len {
                let mut v = [0.0; 3];
                for x in &mut v {
                    *x = f64::from_le_bytes(cur.array().map_err(&bad)?);
                }
                steps.push(Action::new(v[0], v[1], v[2]));
            }
            plans.push(ActionPlan::new(steps));
        }
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let m = u16::from_le_bytes(cur.array().map_err(&bad)?);
            if m as usize >= header.mode_names.len() {
                return Err(bad(format!("mode index {m} out of range")));
            }
            modes.push(m);
        }
        let mut refs = Vec::with_capacity(n);
        for _ in 0..n {
            let trajectory = u32::from_le_bytes(cur.array().map_err(&bad)?);
            let timestep = u32::from_le_bytes(cur.array().map_err(&bad)?);
            refs.push(ObsRef {
                trajectory,
                timestep,
            });
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        if n == 0 {
            return Err(bad("model has no entries".into()));
        }
        Ok(PolicyModel {
            encoder: header.encoder,
            k: header.k,
            temperature: header.temperature,
            noise: header.noise,
            plan_len: header.plan_len,
            mode_names: header.mode_names,
            dataset_hash: header.dataset_hash,
            embeddings,
            plans,
            modes,
            refs,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    k: usize,
    temperature: f64,
    noise: f64,
    plan_len: usize,
    mode_names: Vec<String>,
    dataset_hash: String,
    entries: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "file is truncated".to_string())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        LabelGridImage, LabelId, LabelRegistry, Observation, Proprioception, Trajectory,
    };

    fn one_pair_dataset() -> Dataset {
        let mut ds = Dataset::new(LabelRegistry::new(["bg", "agent"]), 8, 8, 2);
        let plan = ActionPlan::new(vec![Action::new(1.0, 0.0, 0.0), Action::new(0.0, 1.0, 0.0)]);
        ds.trajectories.push(Trajectory {
            pairs: vec![(
                Observation {
                    image: LabelGridImage::filled(8, 8, LabelId(0)),
                    proprio: Proprioception::new(1.0, 1.0, 0.0),
                    timestep: 0,
                },
                plan,
            )],
            environment_id: "e".into(),
            mode_label: "only".into(),
        });
        ds
    }

    #[test]
    fn single_pair_always_returns_its_plan() {
        let ds = one_pair_dataset();
        let model = fit_policy(&ds, EncoderConfig::new(2, 8), PolicyParams::default()).unwrap();
        assert_eq!(model.len(), 1);
        assert_eq!(model.k, 1);
        let z = Embedding::new(vec![0.3; model.dim()]);
        let clean = model.sample_with_noise(&z, 0.0, 5).plan;
        assert_eq!(&clean, &ds.trajectories[0].pairs[0].1);
        let noisy = model.sample_plan(&z, 5);
        for (a, b) in noisy.steps.iter().zip(&clean.steps) {
            assert!((a.dx - b.dx).abs() < 0.2);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset::new(LabelRegistry::new(["bg"]), 8, 8, 2);
        assert!(matches!(
            fit_policy(&ds, EncoderConfig::new(1, 8), PolicyParams::default()),
            Err(PolicyError::EmptyDataset)
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = one_pair_dataset();
        let model = fit_policy(&ds, EncoderConfig::new(2, 8), PolicyParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pmod");
        model.save(&path).unwrap();
        assert_eq!(PolicyModel::load(&path).unwrap(), model);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            PolicyModel::load(&path),
            Err(PolicyError::Format { .. })
        ));
    }
}
