//! A rollout shared with an operator: a versioned state snapshot, run
//! control (pause, resume, single step) and an expert that waits for typed
//! feedback.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CycleView, Monitor, RolloutRecord, StepEntry};
use crate::model::{Dataset, LabelGridImage, ObsRef, Proprioception};
use crate::modes::{Expert, ExpertFailure, ExpertQuery};

/// Bumped whenever a field of [`Snapshot`] changes meaning or is removed.
pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Idle,
    Running,
    Paused,
    AwaitingFeedback,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    Pause,
    Resume,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub width: usize,
    pub height: usize,
    /// Run-length encoded label ids, `count*id` joined by commas.
    pub rle: String,
    pub labels: Vec<String>,
}

impl ImageView {
    fn new(image: &LabelGridImage, labels: &[String]) -> ImageView {
        ImageView {
            width: image.width(),
            height: image.height(),
            rle: image.to_rle(),
            labels: labels.to_vec(),
        }
    }
}

/// A retrieved training observation, rendered for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thumbnail {
    pub obs: ObsRef,
    pub score: f64,
    pub image: ImageView,
}

/// Everything an operator console renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    /// Increments on every change.
    pub seq: u64,
    pub status: Status,
    pub scenario: String,
    pub object: String,
    pub method: String,
    pub timestep: u32,
    pub horizon: u32,
    pub image: Option<ImageView>,
    pub proprio: Option<Proprioception>,
    pub description: String,
    pub feedback_total: usize,
    pub last_entry: Option<StepEntry>,
    pub pending_query: Option<ExpertQuery>,
    /// Top retrievals of the pending query, or of the last cycle when no
    /// query is pending.
    pub thumbnails: Vec<Thumbnail>,
    pub subgoals: Vec<bool>,
    pub success: Option<bool>,
    pub error: Option<String>,
}

impl Snapshot {
    fn idle() -> Snapshot {
        Snapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            seq: 0,
            status: Status::Idle,
            scenario: String::new(),
            object: String::new(),
            method: String::new(),
            timestep: 0,
            horizon: 0,
            image: None,
            proprio: None,
            description: String::new(),
            feedback_total: 0,
            last_entry: None,
            pending_query: None,
            thumbnails: Vec::new(),
            subgoals: Vec::new(),
            success: None,
            error: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LiveError {
    #[error("no expert query is pending")]
    NoPendingQuery,
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("rollout has finished")]
    Finished,
}

struct Inner {
    snapshot: Snapshot,
    paused: bool,
    /// Cycles allowed to run while paused.
    step_credit: u32,
    feedback: Option<String>,
    stop: bool,
}

const THUMBNAILS: usize = 5;

/// Shared between the rollout thread and request handlers.
pub struct LiveSession {
    inner: Mutex<Inner>,
    changed: Condvar,
    /// Source of retrieval thumbnails.
    gallery: Option<Arc<Dataset>>,
}

impl LiveSession {
    pub fn new(start_paused: bool) -> Arc<LiveSession> {
        Self::build(start_paused, None)
    }

    /// A session whose snapshots carry thumbnails of retrieved observations.
    pub fn with_gallery(start_paused: bool, dataset: Arc<Dataset>) -> Arc<LiveSession> {
        Self::build(start_paused, Some(dataset))
    }

    fn build(start_paused: bool, gallery: Option<Arc<Dataset>>) -> Arc<LiveSession> {
        Arc::new(LiveSession {
            gallery,
            inner: Mutex::new(Inner {
                snapshot: Snapshot::idle(),
                paused: start_paused,
                step_credit: 0,
                feedback: None,
                stop: false,
            }),
            changed: Condvar::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn thumbnails(&self, top: &[(ObsRef, f64)]) -> Vec<Thumbnail> {
        let Some(ds) = &self.gallery else {
            return Vec::new();
        };
        let labels: Vec<String> = ds
            .label_registry
            .iter()
            .map(|(_, n)| n.to_string())
            .collect();
        top.iter()
            .take(THUMBNAILS)
            .filter_map(|&(obs, score)| {
                let o = ds.observation(obs)?;
                Some(Thumbnail {
                    obs,
                    score,
                    image: ImageView::new(&o.image, &labels),
                })
            })
            .collect()
    }

    fn touch(&self, inner: &mut Inner) {
        inner.snapshot.seq += 1;
        self.changed.notify_all();
    }

    pub fn snapshot(&self) -> Snapshot {
        self.lock().snapshot.clone()
    }

    /// Blocks until the snapshot sequence exceeds `seen` or `timeout` passes,
    /// then returns the current snapshot.
    pub fn wait_for_change(&self, seen: u64, timeout: Duration) -> Snapshot {
        let guard = self.lock();
        let (guard, _) = self
            .changed
            .wait_timeout_while(guard, timeout, |i| i.snapshot.seq <= seen)
            .unwrap_or_else(|e| e.into_inner());
        guard.snapshot.clone()
    }

    pub fn control(&self, c: Control) -> Result<Snapshot, LiveError> {
        let mut inner = self.lock();
        if inner.snapshot.status == Status::Done {
            return Err(LiveError::Finished);
        }
        match c {
            Control::Pause => inner.paused = true,
            Control::Resume => {
                inner.paused = false;
                inner.step_credit = 0;
            }
            Control::Step => {
                inner.paused = true;
                inner.step_credit += 1;
            }
        }
        if inner.snapshot.status == Status::Running && inner.paused && inner.step_credit == 0 {
            inner.snapshot.status = Status::Paused;
        } else if inner.snapshot.status == Status::Paused
            && (!inner.paused || inner.step_credit > 0)
        {
            inner.snapshot.status = Status::Running;
        }
        self.touch(&mut inner);
        Ok(inner.snapshot.clone())
    }

    /// Delivers the operator's answer to the pending expert query.
    pub fn submit_feedback(&self, text: &str) -> Result<(), LiveError> {
        let mut inner = self.lock();
        if inner.snapshot.status == Status::Done {
            return Err(LiveError::Finished);
        }
        if inner.snapshot.pending_query.is_none() {
            return Err(LiveError::NoPendingQuery);
        }
        if text.trim().is_empty() {
            return Err(LiveError::EmptyFeedback);
        }
        inner.feedback = Some(text.to_string());
        self.touch(&mut inner);
        Ok(())
    }

    /// Asks a running rollout to stop at its next cycle.
    pub fn stop(&self) {
        let mut inner = self.lock();
        inner.stop = true;
        inner.paused = false;
        self.touch(&mut inner);
    }

    /// Publishes the final record.
    pub fn finish(&self, record: &RolloutRecord) {
        let mut inner = self.lock();
        let s = &mut inner.snapshot;
        s.status = Status::Done;
        s.subgoals = record.subgoals.clone();
        s.success = Some(record.success);
        s.error = record.error.clone();
        s.description = record.description.clone();
        s.feedback_total = record.feedback_total;
        s.pending_query = None;
        self.touch(&mut inner);
    }

    /// Records a failure that prevented the rollout from producing a record.
    pub fn fail(&self, message: &str) {
        let mut inner = self.lock();
        inner.snapshot.status = Status::Done;
        inner.snapshot.error = Some(message.to_string());
        self.touch(&mut inner);
    }

    pub fn monitor(self: &Arc<Self>) -> LiveMonitor {
        LiveMonitor {
            session: Arc::clone(self),
        }
    }

    pub fn expert(self: &Arc<Self>, timeout: Duration) -> InteractiveExpert {
        InteractiveExpert {
            session: Arc::clone(self),
            timeout,
        }
    }
}

/// Mirrors rollout progress into the session and holds the rollout while
/// it is paused.
pub struct LiveMonitor {
    session: Arc<LiveSession>,
}

impl Monitor for LiveMonitor {
    fn on_cycle(&mut self, view: &CycleView<'_>) -> bool {
        let session = &self.session;
        let mut inner = session.lock();
        let held = inner.paused && inner.step_credit == 0;
        {
            let s = &mut inner.snapshot;
            s.scenario = view.scene.scenario_id.clone();
            s.object = view.scene.object.name.clone();
            s.method = view.method.name().to_string();
            s.timestep = view.observation.timestep;
            s.horizon = view.scene.horizon;
            let labels: Vec<String> = view.registry.iter().map(|(_, n)| n.to_string()).collect();
            s.image = Some(ImageView::new(&view.observation.image, &labels));
            s.proprio = Some(view.observation.proprio);
            s.description = view.description.to_string();
            s.feedback_total = view.feedback_total;
            s.last_entry = view.last.cloned();
            s.thumbnails = view
                .last
                .map(|e| session.thumbnails(&e.retrieval))
                .unwrap_or_default();
            if !view.done {
                s.status = if held {
                    Status::Paused
                } else {
                    Status::Running
                };
            }
        }
        session.touch(&mut inner);
        if view.done {
            return true;
        }
        loop {
            if inner.stop {
                return false;
            }
            if !inner.paused {
                return true;
            }
            if inner.step_credit > 0 {
                inner.step_credit -= 1;
                return true;
            }
            inner.snapshot.status = Status::Paused;
            inner = session
                .changed
                .wait(inner)
                .unwrap_or_else(|e| e.into_inner());
        }
    }
}

/// Publishes each query and waits for the operator's answer.
pub struct InteractiveExpert {
    session: Arc<LiveSession>,
    timeout: Duration,
}

impl Expert for InteractiveExpert {
    fn respond(&mut self, query: &ExpertQuery) -> Result<String, ExpertFailure> {
        let session = &self.session;
        let mut inner = session.lock();
        inner.feedback = None;
        inner.snapshot.pending_query = Some(query.clone());
        inner.snapshot.thumbnails = session.thumbnails(&query.top);
        inner.snapshot.status = Status::AwaitingFeedback;
        session.touch(&mut inner);
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(text) = inner.feedback.take() {
                inner.snapshot.pending_query = None;
                inner.snapshot.status = Status::Running;
                session.touch(&mut inner);
                return Ok(text);
            }
            let now = Instant::now();
            if inner.stop || now >= deadline {
                inner.snapshot.pending_query = None;
                inner.snapshot.status = Status::Running;
                session.touch(&mut inner);
                return Err(if inner.stop {
                    ExpertFailure::Unavailable("session stopped".into())
                } else {
                    ExpertFailure::Timeout
                });
            }
            inner = session
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}
