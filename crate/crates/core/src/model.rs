//! Domain types shared by every stage of the pipeline, plus the dataset
//! container and its on-disk format.
//!
//! A dataset file (`.dslog`) is line-delimited JSON. The first line is a
//! header carrying the format version, plan length, grid size, label registry
//! and generation hash; every following line is one trajectory. Label grids
//! are stored run-length encoded (`"<count>*<label>,..."`) so files stay small
//! and diffable.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest magnitude of any action component, per step.
pub const ACTION_BOUND: f64 = 1.0;

/// Default number of steps in an action plan.
pub const DEFAULT_PLAN_LEN: usize = 16;

pub const DATASET_FORMAT: &str = "aba-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Semantic label id of a grid cell. Id 0 is the background of the training
/// environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u16);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense registry of label names, indexed by id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelRegistry {
    names: Vec<String>,
}

impl LabelRegistry {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| LabelId(i as u16))
    }

    pub fn contains(&self, id: LabelId) -> bool {
        (id.0 as usize) < self.names.len()
    }

    /// The id reserved for labels outside this registry: one past the largest
    /// registered id.
    pub fn unknown(&self) -> LabelId {
        LabelId(self.names.len() as u16)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LabelId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (LabelId(i as u16), n.as_str()))
    }

    /// Appends a name and returns its id; returns the existing id when the
    /// name is already registered.
    pub fn register(&mut self, name: &str) -> LabelId {
        if let Some(id) = self.id(name) {
            return id;
        }
        self.names.push(name.to_string());
        LabelId((self.names.len() - 1) as u16)
    }
}

/// Robot proprioception: planar position in grid units and gripper closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proprioception {
    pub x: f64,
    pub y: f64,
    /// 0 open, 1 closed.
    pub gripper: f64,
}

impl Proprioception {
    pub fn new(x: f64, y: f64, gripper: f64) -> Self {
        Self { x, y, gripper }
    }

    pub fn distance(&self, other: &Proprioception) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dg = self.gripper - other.gripper;
        (dx * dx + dy * dy + dg * dg).sqrt()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), String> {
        if !(self.x.is_finite() && self.y.is_finite() && self.gripper.is_finite()) {
            return Err("non-finite proprioception".into());
        }
        if self.x < 0.0
            || self.x > (width - 1) as f64
            || self.y < 0.0
            || self.y > (height - 1) as f64
        {
            return Err(format!(
                "position ({}, {}) outside workspace",
                self.x, self.y
            ));
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(format!("gripper {} outside [0, 1]", self.gripper));
        }
        Ok(())
    }
}

/// Row-major grid of semantic label ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelGridImage {
    width: usize,
    height: usize,
    cells: Vec<LabelId>,
}

impl LabelGridImage {
    pub fn filled(width: usize, height: usize, label: LabelId) -> Self {
        Self {
            width,
            height,
            cells: vec![label; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<LabelId>) -> Result<Self, String> {
        if cells.len() != width * height {
            return Err(format!(
                "cells length {} does not match {width}x{height}",
                cells.len()
            ));
        }
        Ok(Self {
            width,
            height,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[LabelId] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> LabelId {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: LabelId) {
        self.cells[row * self.width + col] = label;
    }

    /// Distinct labels present, ascending.
    pub fn labels(&self) -> Vec<LabelId> {
        let mut seen: Vec<LabelId> = self.cells.clone();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn count(&self, label: LabelId) -> usize {
        self.cells.iter().filter(|&&c| c == label).count()
    }

    /// Run-length encoding used by the dataset format.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let mut iter = self.cells.iter().peekable();
        while let Some(&label) = iter.next() {
            let mut run = 1usize;
            while iter.peek() == Some(&&label) {
                iter.next();
                run += 1;
            }
            if !out.is_empty() {
                out.push(',');
            }
            out.push_str(&format!("{run}*{label}"));
        }
        out
    }

    pub fn from_rle(width: usize, height: usize, rle: &str) -> Result<Self, String> {
        let mut cells = Vec::with_capacity(width * height);
        if !rle.is_empty() {
            for run in rle.split(',') {
                let (count, label) = run
                    .split_once('*')
                    .ok_or_else(|| format!("malformed run {run:?}"))?;
                let count: usize = count
                    .parse()
                    .map_err(|_| format!("malformed run {run:?}"))?;
                let label: u16 = label
                    .parse()
                    .map_err(|_| format!("malformed run {run:?}"))?;
                if cells.len() + count > width * height {
                    return Err("run-length data overflows the grid".into());
                }
                cells.extend(std::iter::repeat(LabelId(label)).take(count));
            }
        }
        Self::from_cells(width, height, cells)
    }
}

/// One stacked image + proprioception observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub image: LabelGridImage,
    pub proprio: Proprioception,
    pub timestep: u32,
}

/// A single per-step action: deltas in grid units and gripper closure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dgripper: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        dx: 0.0,
        dy: 0.0,
        dgripper: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dgripper: f64) -> Self {
        Self { dx, dy, dgripper }
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64| v.clamp(-ACTION_BOUND, ACTION_BOUND);
        Self::new(c(self.dx), c(self.dy), c(self.dgripper))
    }

    pub fn is_valid(&self) -> bool {
        [self.dx, self.dy, self.dgripper]
            .iter()
            .all(|v| v.is_finite() && v.abs() <= ACTION_BOUND)
    }
}

/// T-step action sequence emitted by a policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionPlan {
    pub steps: Vec<Action>,
}

impl ActionPlan {
    pub fn new(steps: Vec<Action>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Flattened `[dx0, dy0, dg0, dx1, ...]` vector used for clustering.
    pub fn flatten(&self) -> Vec<f64> {
        self.steps
            .iter()
            .flat_map(|a| [a.dx, a.dy, a.dgripper])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub pairs: Vec<(Observation, ActionPlan)>,
    pub environment_id: String,
    /// Behavior mode of the demonstrator that produced this trajectory.
    pub mode_label: String,
}

impl Trajectory {
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.pairs.iter().map(|(o, _)| o)
    }
}

/// Fixed-dimension latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Identifies one observation inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObsRef {
    pub trajectory: u32,
    pub timestep: u32,
}

impl fmt::Display for ObsRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.trajectory, self.timestep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub label_registry: LabelRegistry,
    pub config_hash: String,
    pub plan_len: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported dataset format {format:?} version {version}")]
    Version { format: String, version: u32 },
    #[error("malformed record at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
}

impl DatasetError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        DatasetError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl Dataset {
    pub fn new(
        label_registry: LabelRegistry,
        width: usize,
        height: usize,
        plan_len: usize,
    ) -> Self {
        Self {
            trajectories: Vec::new(),
            label_registry,
            config_hash: String::new(),
            plan_len,
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.pairs.len()).sum()
    }

    pub fn observation(&self, r: ObsRef) -> Option<&Observation> {
        self.trajectories
            .get(r.trajectory as usize)?
            .pairs
            .get(r.timestep as usize)
            .map(|(o, _)| o)
    }

    pub fn plan(&self, r: ObsRef) -> Option<&ActionPlan> {
        self.trajectories
            .get(r.trajectory as usize)?
            .pairs
            .get(r.timestep as usize)
            .map(|(_, p)| p)
    }

    /// The (up to `len`) observations ending at `r`, oldest first, padded by
    /// repeating the first observation of the trajectory.
    pub fn history(&self, r: ObsRef, len: usize) -> Vec<&Observation> {
        let traj = &self.trajectories[r.trajectory as usize];
        let end = r.timestep as usize;
        (0..len)
            .map(|k| {
                let back = len - 1 - k;
                let idx = end.saturating_sub(back);
                &traj.pairs[idx].0
            })
            .collect()
    }

    pub fn mode_labels(&self) -> Vec<String> {
        let mut modes: Vec<String> = self
            .trajectories
            .iter()
            .map(|t| t.mode_label.clone())
            .collect();
        modes.sort();
        modes.dedup();
        modes
    }

    /// Checks every invariant the file format promises.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.width == 0 || self.height == 0 {
            return Err(DatasetError::invalid("grid", "zero-sized grid"));
        }
        if self.plan_len == 0 {
            return Err(DatasetError::invalid("plan_len", "must be positive"));
        }
        for (ti, traj) in self.trajectories.iter().enumerate() {
            if traj.pairs.is_empty() {
                return Err(DatasetError::invalid(
                    format!("trajectories[{ti}].pairs"),
                    "trajectory is empty",
                ));
            }
            let mut last: Option<u32> = None;
            for (oi, (obs, plan)) in traj.pairs.iter().enumerate() {
                let at = format!("trajectories[{ti}].pairs[{oi}]");
                if let Some(prev) = last {
                    if obs.timestep <= prev {
                        return Err(DatasetError::invalid(
                            format!("{at}.timestep"),
                            format!("{} does not increase past {prev}", obs.timestep),
                        ));
                    }
                }
                last = Some(obs.timestep);
                if obs.image.width() != self.width || obs.image.height() != self.height {
                    return Err(DatasetError::invalid(
                        format!("{at}.image"),
                        format!(
                            "{}x{} image in a {}x{} dataset",
                            obs.image.width(),
                            obs.image.height(),
                            self.width,
                            self.height
                        ),
                    ));
                }
                if let Some(bad) = obs
                    .image
                    .labels()
                    .into_iter()
                    .find(|l| !self.label_registry.contains(*l))
                {
                    return Err(DatasetError::invalid(
                        format!("{at}.image"),
                        format!("unregistered label id {bad}"),
                    ));
                }
                obs.proprio
                    .validate(self.width, self.height)
                    .map_err(|m| DatasetError::invalid(format!("{at}.proprio"), m))?;
                if plan.len() != self.plan_len {
                    return Err(DatasetError::invalid(
                        format!("{at}.plan"),
                        format!("length {} != {}", plan.len(), self.plan_len),
                    ));
                }
                if let Some(step) = plan.steps.iter().position(|a| !a.is_valid()) {
                    return Err(DatasetError::invalid(
                        format!("{at}.plan[{step}]"),
                        "action is non-finite or out of bounds",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    plan_len: usize,
    width: usize,
    height: usize,
    labels: LabelRegistry,
    config_hash: String,
    trajectories: usize,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    t: u32,
    q: [f64; 3],
    image: String,
    plan: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    environment_id: String,
    mode_label: String,
    pairs: Vec<PairRecord>,
}

/// Writes `dataset` to `path` atomically: the data goes to a temporary file in
/// the same directory which is renamed into place only once complete.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            plan_len: dataset.plan_len,
            width: dataset.width,
            height: dataset.height,
            labels: dataset.label_registry.clone(),
            config_hash: dataset.config_hash.clone(),
            trajectories: dataset.trajectories.len(),
        };
        write_json_line(&mut w, &header).map_err(io)?;
        for traj in &dataset.trajectories {
            let record = TrajectoryRecord {
                environment_id: traj.environment_id.clone(),
                mode_label: traj.mode_label.clone(),
                pairs: traj
                    .pairs
                    .iter()
                    .map(|(o, p)| PairRecord {
                        t: o.timestep,
                        q: [o.proprio.x, o.proprio.y, o.proprio.gripper],
                        image: o.image.to_rle(),
                        plan: p.steps.iter().map(|a| [a.dx, a.dy, a.dgripper]).collect(),
                    })
                    .collect(),
            };
            write_json_line(&mut w, &record).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| DatasetError::Format {
            line: 1,
            message: "missing header".into(),
        })?
        .map_err(io)?;
    let header: Header = serde_json::from_str(&first).map_err(|e| DatasetError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(DatasetError::Version {
            format: header.format,
            version: header.version,
        });
    }
    let mut dataset = Dataset::new(header.labels, header.width, header.height, header.plan_len);
    dataset.config_hash = header.config_hash;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Format {
                line: lineno,
                message: e.to_string(),
            })?;
        let mut pairs = Vec::with_capacity(record.pairs.len());
        for p in record.pairs {
            let image = LabelGridImage::from_rle(dataset.width, dataset.height, &p.image).map_err(
                |message| DatasetError::Format {
                    line: lineno,
                    message,
                },
            )?;
            let obs = Observation {
                image,
                proprio: Proprioception::new(p.q[0], p.q[1], p.q[2]),
                timestep: p.t,
            };
            let plan = ActionPlan::new(
                p.plan
                    .iter()
                    .map(|a| Action::new(a[0], a[1], a[2]))
                    .collect(),
            );
            pairs.push((obs, plan));
        }
        dataset.trajectories.push(Trajectory {
            pairs,
            environment_id: record.environment_id,
            mode_label: record.mode_label,
        });
    }
    if dataset.trajectories.len() != header.trajectories {
        return Err(DatasetError::invalid(
            "trajectories",
            format!(
                "header promises {} records, file holds {} (truncated?)",
                header.trajectories,
                dataset.trajectories.len()
            ),
        ));
    }
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        let reg = LabelRegistry::new(["floor", "agent", "pen"]);
        let mut ds = Dataset::new(reg, 4, 4, 2);
        ds.config_hash = "abc".into();
        let mut img = LabelGridImage::filled(4, 4, LabelId(0));
        img.set(1, 1, LabelId(2));
        img.set(3, 0, LabelId(1));
        let plan = ActionPlan::new(vec![Action::new(0.5, -0.25, 1.0), Action::ZERO]);
        ds.trajectories.push(Trajectory {
            pairs: vec![
                (
                    Observation {
                        image: img.clone(),
                        proprio: Proprioception::new(0.1 + 0.2, 3.0, 0.0),
                        timestep: 0,
                    },
                    plan.clone(),
                ),
                (
                    Observation {
                        image: img,
                        proprio: Proprioception::new(1.0 / 3.0, 2.0, 1.0),
                        timestep: 1,
                    },
                    plan,
                ),
            ],
            environment_id: "env".into(),
            mode_label: "m".into(),
        });
        ds
    }

    #[test]
    fn rle_roundtrip() {
        let ds = tiny_dataset();
        let img = &ds.trajectories[0].pairs[0].0.image;
        let rle = img.to_rle();
        assert_eq!(rle, "5*0,1*2,6*0,1*1,3*0");
        assert_eq!(&LabelGridImage::from_rle(4, 4, &rle).unwrap(), img);
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.dslog");
        let ds = Dataset::new(LabelRegistry::new(["floor"]), 8, 8, 16);
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn single_trajectory_roundtrips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.dslog");
        let ds = tiny_dataset();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let q = back.trajectories[0].pairs[1].0.proprio.x;
        assert_eq!(q.to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dslog");
        let mut ds = tiny_dataset();
        ds.trajectories.push(ds.trajectories[0].clone());
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Drop the last record entirely.
        let cut: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&path, cut.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::Validation { .. })
        ));
        // Chop a record mid-line.
        std::fs::write(&path, &text[..text.len() - 40]).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::Format { .. })
        ));
    }

    #[test]
    fn unregistered_label_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dslog");
        let mut ds = tiny_dataset();
        ds.trajectories[0].pairs[0].0.image.set(0, 0, LabelId(7));
        save_dataset(&ds, &path).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("unregistered label id 7"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.dslog");
        save_dataset(&tiny_dataset(), &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::Version { version: 9, .. })
        ));
    }

    #[test]
    fn unwritable_path_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = save_dataset(&tiny_dataset(), &blocker.join("sub/d.dslog")).unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
        assert!(err.to_string().contains("d.dslog"));
    }

    #[test]
    fn registry_unknown_is_one_past_max() {
        let reg = LabelRegistry::new(["a", "b", "c"]);
        assert_eq!(reg.unknown(), LabelId(3));
        assert_eq!(reg.id("b"), Some(LabelId(1)));
    }
}
