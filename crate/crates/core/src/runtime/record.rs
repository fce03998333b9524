//! Per-rollout logs. Records are written as JSON lines under
//! `runs/<bench-id>/records.jsonl`, sorted by record id.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Method;
use crate::model::{Action, LabelGridImage, ObsRef};
use crate::modes::{FeedbackEvent, StopReason};

/// One planning cycle: the observation it started from and what was done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub timestep: u32,
    pub obs_digest: String,
    pub id_score: f64,
    pub ood: bool,
    /// Top-M retrieved observations with their scores; empty when the method
    /// acted on its own embedding.
    pub retrieval: Vec<(ObsRef, f64)>,
    /// For baselines: the top-M an expert-guided retrieval would have chosen
    /// at this observation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<ObsRef>>,
    /// Set when an OOD observation found no candidates and the policy acted
    /// on its own embedding.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entropy_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_stop: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<FeedbackEvent>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task: String,
    pub scenario: String,
    pub object: String,
    pub ood_kind: String,
    pub method: Method,
    pub seed: u64,
    pub placement: i32,
    pub horizon: u32,
    pub entries: Vec<StepEntry>,
    pub subgoals: Vec<bool>,
    pub success: bool,
    pub feedback_total: usize,
    pub description: String,
    /// True when the rollout stopped early (expert abort or simulator error).
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RolloutRecord {
    /// Stable identifier used to order records.
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}/{}/{:020}",
            self.task,
            self.scenario,
            self.object,
            self.method.name(),
            self.seed
        )
    }

    pub fn steps(&self) -> u32 {
        self.entries.iter().map(|e| e.actions.len() as u32).sum()
    }

    /// Number of subgoals reached before the first miss.
    pub fn cumulative_subgoals(&self) -> usize {
        self.subgoals.iter().take_while(|&&s| s).count()
    }

    /// Checks the invariants the analyses rely on.
    pub fn validate(&self) -> Result<(), String> {
        let events: usize = self.entries.iter().map(|e| e.feedback.len()).sum();
        if events != self.feedback_total {
            return Err(format!(
                "{}: feedback total {} but {events} events",
                self.id(),
                self.feedback_total
            ));
        }
        if self.steps() > self.horizon {
            return Err(format!(
                "{}: {} steps exceed horizon",
                self.id(),
                self.steps()
            ));
        }
        if self.entries.len() > self.horizon as usize {
            return Err(format!("{}: more entries than horizon", self.id()));
        }
        Ok(())
    }
}

/// Short content digest of a rendered observation.
pub fn digest(image: &LabelGridImage) -> String {
    let h = Sha256::digest(image.to_rle().as_bytes());
    hex::encode(&h[..8])
}

pub fn write_records(records: &[RolloutRecord], path: &Path) -> std::io::Result<()> {
    let mut sorted: Vec<&RolloutRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id());
    let mut out = Vec::new();
    for r in sorted {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()
}

pub fn read_records(path: &Path) -> Result<Vec<RolloutRecord>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RolloutRecord = serde_json::from_str(&line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
