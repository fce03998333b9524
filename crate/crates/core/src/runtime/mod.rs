//! Closed-loop rollouts: receding-horizon execution with an OOD gate and,
//! for the adaptive methods, retrieval-based embedding intervention.

pub mod expert;
pub mod live;
pub mod record;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{
    decode_description, filter_by_proprio, rank_retrieval, CorrespondenceDescription,
    CorrespondenceError, RankedRetrieval, Segmenter,
};
use crate::model::{
    ActionPlan, Dataset, Embedding, LabelGridImage, LabelRegistry, ObsRef, Observation,
};
use crate::modes::{
    action_for, cluster_modes, refine_until_confident, Expert, ModeClustering, RefineConfig,
    RefineContext, StopReason,
};
use crate::ood::{IdIndex, OodError};
use crate::policy::{encode, fit_policy, pool_channels, EncoderConfig, PolicyModel, PolicyParams};
use crate::rng;
use crate::sim::{
    evaluate, generate_dataset, held_out_trajectories, observe, sample_placement, step, Scene,
    SimError, TaskConfig,
};

pub use expert::{NoExpert, ScriptedExpert};
pub use record::{digest, read_records, write_records, RolloutRecord, StepEntry};

/// Execution noise of the held-out demonstrations used for calibration.
pub const CALIBRATION_NOISE: f64 = 0.02;
pub const CALIBRATION_TRAJECTORIES: usize = 40;
/// Pooled cells per side of the appearance features used by `VisualEmbed`.
pub const VISUAL_POOL: usize = 8;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ood(#[from] OodError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error("model was fit to dataset {model}, but the dataset is {dataset}")]
    HashMismatch { model: String, dataset: String },
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    PolicyEmbed,
    VisualEmbed,
    Aba,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Vanilla,
        Method::PolicyEmbed,
        Method::VisualEmbed,
        Method::Aba,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::PolicyEmbed => "policy-embed",
            Method::VisualEmbed => "visual-embed",
            Method::Aba => "aba",
        }
    }

    /// Methods that rank retrieved observations without expert input.
    pub fn is_similarity_baseline(self) -> bool {
        matches!(self, Method::PolicyEmbed | Method::VisualEmbed)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RuntimeError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    /// Retrievals averaged into the intervened embedding.
    pub top_m: usize,
    pub proprio_radius: f64,
    pub max_entropy: f64,
    pub max_queries: usize,
    pub clusters: usize,
    /// Plan steps executed before replanning.
    pub exec_horizon: usize,
    /// Overrides the policy's action noise when set.
    pub noise: Option<f64>,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            top_m: 5,
            proprio_radius: 2.0,
            max_entropy: crate::modes::DEFAULT_MAX_ENTROPY,
            max_queries: crate::modes::DEFAULT_MAX_QUERIES,
            clusters: crate::modes::DEFAULT_CLUSTERS,
            exec_horizon: 8,
            noise: None,
        }
    }
}

/// Fixed seed for the plans sampled at retrieved observations, so that the
/// mode clustering of a candidate set does not depend on the rollout.
const ACTION_SET_SEED: u64 = 0x5eed_a5e7;
const CLUSTER_SEED: u64 = 0xc1a5_7e25;

/// Everything a rollout reads: the task, ID data, fitted policy and
/// calibrated OOD index.
pub struct Components {
    pub config: TaskConfig,
    pub dataset: Dataset,
    pub policy: PolicyModel,
    pub index: IdIndex,
    /// Appearance features of every training observation, by policy index.
    visual: Vec<Vec<f64>>,
    appearance: Vec<Option<usize>>,
    appearance_classes: usize,
    plan_cache: Mutex<HashMap<ObsRef, ActionPlan>>,
}

impl Components {
    pub fn new(
        config: TaskConfig,
        dataset: Dataset,
        policy: PolicyModel,
        index: IdIndex,
    ) -> Result<Components, RuntimeError> {
        if policy.dataset_hash != dataset.config_hash {
            return Err(RuntimeError::HashMismatch {
                model: policy.dataset_hash.clone(),
                dataset: dataset.config_hash.clone(),
            });
        }
        index.threshold()?;
        if let Some(cal) = index
            .calibration
            .as_ref()
            .filter(|c| c.dataset_hash != dataset.config_hash)
        {
            return Err(RuntimeError::HashMismatch {
                model: cal.dataset_hash.clone(),
                dataset: dataset.config_hash.clone(),
            });
        }
        let mut classes: Vec<&str> = config
            .objects
            .iter()
            .map(|o| o.appearance.as_str())
            .collect();
        classes.sort_unstable();
        classes.dedup();
        let appearance = (0..config.registry.len())
            .map(|id| {
                let name = config.registry.name(crate::model::LabelId(id as u16))?;
                let obj = config.objects.iter().find(|o| o.name == name)?;
                classes.iter().position(|c| *c == obj.appearance)
            })
            .collect();
        let mut comp = Components {
            appearance_classes: classes.len(),
            appearance,
            visual: Vec::new(),
            config,
            dataset,
            policy,
            index,
            plan_cache: Mutex::new(HashMap::new()),
        };
        comp.visual = (0..comp.policy.len())
            .map(|i| {
                let r = comp.policy.obs_ref(i);
                comp.visual_features(&comp.dataset.observation(r).expect("policy ref").image)
            })
            .collect();
        Ok(comp)
    }

    /// Generates the ID dataset, fits the policy and calibrates the gate.
    pub fn build(
        config: TaskConfig,
        demos_per_mode: usize,
        percentile: f64,
        seed: u64,
    ) -> Result<Components, RuntimeError> {
        let dataset = generate_dataset(&config, demos_per_mode, seed)?;
        let policy = fit_policy(
            &dataset,
            EncoderConfig::new(dataset.label_registry.len(), config.grid),
            PolicyParams::default(),
        )?;
        let mut index = IdIndex::from_model(&policy)?;
        let held_out = calibration_embeddings(&config, &policy, seed)?;
        index.calibrate(&held_out, percentile, &dataset.config_hash)?;
        Components::new(config, dataset, policy, index)
    }

    /// Appearance-class occupancy: object cells pooled by their generic
    /// visual class, ignoring background, agent and fixtures.
    pub fn visual_features(&self, image: &LabelGridImage) -> Vec<f64> {
        pool_channels(image, VISUAL_POOL, self.appearance_classes, |id| {
            self.appearance.get(id as usize).copied().flatten()
        })
    }

    fn action_plan(&self, r: ObsRef) -> ActionPlan {
        let mut cache = self.plan_cache.lock().expect("plan cache lock");
        cache
            .entry(r)
            .or_insert_with(|| action_for(r, &self.policy, ACTION_SET_SEED))
            .clone()
    }

    fn segmenter(&self, scene: &Scene) -> Segmenter {
        Segmenter::new(
            vec![scene.background, self.config.background, self.config.agent],
            self.config.unknown(),
        )
    }

    /// Mean of the policy embeddings of `refs`.
    pub fn intervene(&self, refs: &[ObsRef]) -> Embedding {
        let mut mean = vec![0.0; self.policy.dim()];
        for &r in refs {
            let i = self.policy.index_of(r).expect("retrieved from the dataset");
            for (m, v) in mean.iter_mut().zip(self.policy.embedding(i)) {
                *m += v;
            }
        }
        let n = refs.len().max(1) as f64;
        Embedding::new(mean.into_iter().map(|v| v / n).collect())
    }

    /// The ranking an expert-guided retrieval with the full description
    /// produces; used as the reference for baseline retrieval precision.
    fn reference_ranking(
        &self,
        image: &LabelGridImage,
        candidates: &[ObsRef],
        full: &CorrespondenceDescription,
        segmenter: &Segmenter,
    ) -> RankedRetrieval {
        rank_retrieval(image, candidates, &self.dataset, full, segmenter)
    }

    fn similarity_ranking(
        &self,
        method: Method,
        z: &Embedding,
        image: &LabelGridImage,
        candidates: &[ObsRef],
    ) -> RankedRetrieval {
        let query = match method {
            Method::PolicyEmbed => z.values.clone(),
            _ => self.visual_features(image),
        };
        let scored = candidates
            .iter()
            .map(|&r| {
                let i = self.policy.index_of(r).expect("retrieved from the dataset");
                let row = match method {
                    Method::PolicyEmbed => self.policy.embedding(i),
                    _ => self.visual[i].as_slice(),
                };
                (r, cosine(&query, row))
            })
            .collect();
        RankedRetrieval::from_scores(scored)
    }
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Embeddings of every observation of noisy held-out ID demonstrations.
pub fn calibration_embeddings(
    config: &TaskConfig,
    policy: &PolicyModel,
    seed: u64,
) -> Result<Vec<Embedding>, SimError> {
    let trajs = held_out_trajectories(
        config,
        CALIBRATION_TRAJECTORIES,
        CALIBRATION_NOISE,
        rng::derive(seed, &[rng::hash_str("calibration")]),
    )?;
    Ok(trajectory_embeddings(&trajs, &policy.encoder))
}

pub fn trajectory_embeddings(
    trajs: &[crate::model::Trajectory],
    enc: &EncoderConfig,
) -> Vec<Embedding> {
    let mut out = Vec::new();
    for t in trajs {
        let obs: Vec<&Observation> = t.observations().collect();
        for i in 0..obs.len() {
            let lo = (i + 1).saturating_sub(enc.history);
            out.push(encode(&obs[lo..=i], enc));
        }
    }
    out
}

/// Snapshot handed to a [`Monitor`] at every planning cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleView<'a> {
    pub scene: &'a Scene,
    pub method: Method,
    pub registry: &'a LabelRegistry,
    pub observation: &'a Observation,
    /// The cycle just completed, if any.
    pub last: Option<&'a StepEntry>,
    pub description: &'a str,
    pub feedback_total: usize,
    pub done: bool,
}

/// Observes a rollout between planning cycles.
pub trait Monitor {
    /// Called before each cycle and once at the end. Returning false stops
    /// the rollout, which is then marked incomplete.
    fn on_cycle(&mut self, view: &CycleView<'_>) -> bool;
}

/// A monitor that never interferes.
pub struct Unmonitored;

impl Monitor for Unmonitored {
    fn on_cycle(&mut self, _view: &CycleView<'_>) -> bool {
        true
    }
}

/// One rollout to run.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSpec {
    pub scenario: String,
    pub object: String,
    pub method: Method,
    pub seed: u64,
}

impl RolloutSpec {
    /// The bundled expert script for this condition, in order.
    pub fn script<'a>(&self, comp: &'a Components) -> &'a [String] {
        comp.config.script(&self.scenario, &self.object)
    }
}

/// Runs one closed-loop episode. `expert` is consulted only by `Aba`.
pub fn run_rollout(
    comp: &Components,
    spec: &RolloutSpec,
    cfg: &InterventionConfig,
    expert: &mut dyn Expert,
    monitor: &mut dyn Monitor,
) -> Result<RolloutRecord, RuntimeError> {
    let config = &comp.config;
    let scenario = config.scenario(&spec.scenario)?;
    let placement = sample_placement(scenario, spec.seed);
    let scene = Scene::new(config, scenario, &spec.object, placement)?;
    let segmenter = comp.segmenter(&scene);
    let noise = cfg.noise.unwrap_or(comp.policy.noise);
    let history_len = comp.policy.encoder.history;

    let full_description = if spec.method.is_similarity_baseline() {
        let script = spec.script(comp).join("; ");
        Some(if script.is_empty() {
            CorrespondenceDescription::default()
        } else {
            decode_description(&script, &config.registry)?
        })
    } else {
        None
    };

    let mut record = RolloutRecord {
        task: config.task.name().to_string(),
        scenario: spec.scenario.clone(),
        object: spec.object.clone(),
        ood_kind: scenario.ood_kind.name().to_string(),
        method: spec.method,
        seed: spec.seed,
        placement,
        horizon: scene.horizon,
        entries: Vec::new(),
        subgoals: Vec::new(),
        success: false,
        feedback_total: 0,
        description: String::new(),
        incomplete: false,
        error: None,
    };
    let mut description: Option<CorrespondenceDescription> = None;
    let mut state = scene.initial_state();
    let mut history: Vec<Observation> = vec![observe(&state, &scene)?];
    let mut cycle = 0u64;

    while state.step < scene.horizon {
        let obs = history.last().expect("history is never empty").clone();
        let desc_text = description
            .as_ref()
            .map(|d| d.to_string())
            .unwrap_or_default();
        let view = CycleView {
            scene: &scene,
            method: spec.method,
            registry: &config.registry,
            observation: &obs,
            last: record.entries.last(),
            description: &desc_text,
            feedback_total: record.feedback_total,
            done: false,
        };
        if !monitor.on_cycle(&view) {
            record.incomplete = true;
            record.error = Some("stopped by operator".into());
            break;
        }

        let window: Vec<&Observation> = history.iter().collect();
        let z = encode(&window, &comp.policy.encoder);
        let (ood, id_score) = comp.index.is_ood(&z)?;
        let mut entry = StepEntry {
            timestep: state.step,
            obs_digest: digest(&obs.image),
            id_score,
            ood,
            retrieval: Vec::new(),
            reference: None,
            fallback: false,
            entropy_trace: Vec::new(),
            refinement_stop: None,
            feedback: Vec::new(),
            actions: Vec::new(),
        };

        let mut query = z.clone();
        if ood && spec.method != Method::Vanilla {
            let candidates = filter_by_proprio(&comp.dataset, &obs.proprio, cfg.proprio_radius)?;
            if candidates.is_empty() {
                entry.fallback = true;
            } else {
                let ranking = if spec.method == Method::Aba {
                    let plans: Vec<ActionPlan> =
                        candidates.iter().map(|&r| comp.action_plan(r)).collect();
                    let clustering = if candidates.len() >= cfg.clusters {
                        cluster_modes(&plans, cfg.clusters, CLUSTER_SEED)
                            .expect("enough plans for the requested clusters")
                    } else {
                        single_cluster(&plans)
                    };
                    let ctx = RefineContext {
                        timestep: state.step,
                        image: &obs.image,
                        candidates: &candidates,
                        plans: &plans,
                        clustering: &clustering,
                        dataset: &comp.dataset,
                        segmenter: &segmenter,
                        registry: &config.registry,
                    };
                    let refine_cfg = RefineConfig {
                        max_entropy: cfg.max_entropy,
                        max_queries: cfg.max_queries,
                        top_m: cfg.top_m,
                        // The first OOD observation always asks for an
                        // initial description.
                        min_queries: usize::from(description.is_none()),
                    };
                    let initial = description.clone().unwrap_or_default();
                    let outcome = refine_until_confident(&ctx, initial, expert, &refine_cfg);
                    entry.entropy_trace = outcome.entropy_trace;
                    entry.refinement_stop = Some(outcome.stop);
                    record.feedback_total += outcome.events.len();
                    entry.feedback = outcome.events;
                    description = Some(outcome.description);
                    if outcome.stop == StopReason::Aborted {
                        record.incomplete = true;
                        record.error = Some("expert did not provide a usable answer".into());
                        record.entries.push(entry);
                        break;
                    }
                    outcome.retrieval
                } else {
                    let full = full_description
                        .as_ref()
                        .expect("baselines carry a reference");
                    if !full.is_empty() {
                        entry.reference = Some(
                            comp.reference_ranking(&obs.image, &candidates, full, &segmenter)
                                .top_refs(cfg.top_m),
                        );
                    }
                    comp.similarity_ranking(spec.method, &z, &obs.image, &candidates)
                };
                let top = ranking.top(cfg.top_m);
                entry.retrieval = top.iter().map(|e| (e.obs, e.score)).collect();
                query = comp.intervene(&ranking.top_refs(cfg.top_m));
            }
        }

        let plan = comp
            .policy
            .sample_with_noise(
                &query,
                noise,
                rng::derive(spec.seed, &[rng::hash_str("plan"), cycle]),
            )
            .plan;
        let mut failed = None;
        for &a in plan.steps.iter().take(cfg.exec_horizon.max(1)) {
            if state.step >= scene.horizon {
                break;
            }
            state = step(&state, a, &scene);
            entry.actions.push(a);
            match observe(&state, &scene) {
                Ok(o) => {
                    history.push(o);
                    if history.len() > history_len {
                        history.remove(0);
                    }
                }
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        record.entries.push(entry);
        if let Some(e) = failed {
            record.incomplete = true;
            record.error = Some(e);
            break;
        }
        cycle += 1;
    }

    let outcome = evaluate(&state, &scene);
    record.subgoals = outcome.subgoals;
    record.success = outcome.success && !record.incomplete;
    record.description = description.map(|d| d.to_string()).unwrap_or_default();
    let last_obs = history.last().expect("history is never empty").clone();
    monitor.on_cycle(&CycleView {
        scene: &scene,
        method: spec.method,
        registry: &config.registry,
        observation: &last_obs,
        last: record.entries.last(),
        description: &record.description,
        feedback_total: record.feedback_total,
        done: true,
    });
    Ok(record)
}

fn single_cluster(plans: &[ActionPlan]) -> ModeClustering {
    ModeClustering {
        labels: vec![0; plans.len()],
        centroids: vec![plans.first().map(ActionPlan::flatten).unwrap_or_default()],
        inertia: 0.0,
    }
}

/// Convenience for callers without an interactive expert: runs `spec` with
/// the bundled script as the expert.
pub fn run_scripted(
    comp: &Components,
    spec: &RolloutSpec,
    cfg: &InterventionConfig,
) -> Result<RolloutRecord, RuntimeError> {
    let mut expert = ScriptedExpert::new(spec.script(comp).iter().cloned());
    run_rollout(comp, spec, cfg, &mut expert, &mut Unmonitored)
}
