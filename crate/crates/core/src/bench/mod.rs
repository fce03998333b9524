//! Benchmark harness: every (scenario, object) condition of a task under
//! every method, seeded rollouts, per-condition summaries and reports.

pub mod precision;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::runtime::{
    run_scripted, Components, InterventionConfig, Method, RolloutRecord, RolloutSpec, RuntimeError,
};
use crate::sim::Task;

pub use precision::{pearson, precision_points, PrecisionPoint, PrecisionSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub task: Task,
    pub methods: Vec<Method>,
    pub rollouts: usize,
    pub seed: u64,
    pub intervention: InterventionConfig,
}

impl BenchConfig {
    pub fn new(task: Task, rollouts: usize, seed: u64) -> Self {
        Self {
            task,
            methods: Method::ALL.to_vec(),
            rollouts,
            seed,
            intervention: InterventionConfig::default(),
        }
    }

    pub fn id(&self) -> String {
        format!("{}-seed{}", self.task.name(), self.seed)
    }
}

/// Seed of the `i`th rollout of a condition; shared by all methods so they
/// face the same placements.
pub fn rollout_seed(bench_seed: u64, scenario: &str, object: &str, i: usize) -> u64 {
    rng::derive(
        bench_seed,
        &[rng::hash_str(scenario), rng::hash_str(object), i as u64],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub task: String,
    pub scenario: String,
    pub object: String,
    pub ood_kind: String,
    pub method: Method,
    pub rollouts: usize,
    pub successes: usize,
    /// Rollouts reaching each subgoal.
    pub subgoals: Vec<usize>,
    pub feedback_total: usize,
    /// Sum of squared per-rollout feedback counts, for the standard error.
    pub feedback_sq: usize,
    pub max_feedback: usize,
    pub incomplete: usize,
    /// Planning cycles flagged OOD, and of those, the ones with no
    /// retrieval candidates.
    pub ood_cycles: usize,
    pub fallback_cycles: usize,
    pub cycles: usize,
    pub horizon: u32,
}

impl ConditionSummary {
    pub fn success_rate(&self) -> f64 {
        ratio(self.successes, self.rollouts)
    }

    pub fn subgoal_rate(&self, i: usize) -> f64 {
        ratio(self.subgoals.get(i).copied().unwrap_or(0), self.rollouts)
    }

    pub fn mean_feedback(&self) -> f64 {
        ratio(self.feedback_total, self.rollouts)
    }

    /// Standard error of the mean feedback count, from the sample variance.
    pub fn feedback_stderr(&self) -> f64 {
        let n = self.rollouts as f64;
        if self.rollouts < 2 {
            return 0.0;
        }
        let mean = self.mean_feedback();
        let var = (self.feedback_sq as f64 - n * mean * mean) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn kind_rank(kind: &str) -> u8 {
    match kind {
        "none" => 0,
        "background" => 1,
        _ => 2,
    }
}

/// Per-condition aggregates, ordered by task, ID before OOD-background
/// before OOD-object, then scenario, object and method.
pub fn summarize_conditions(records: &[RolloutRecord]) -> Vec<ConditionSummary> {
    let mut groups: BTreeMap<(String, u8, String, String, Method), ConditionSummary> =
        BTreeMap::new();
    for r in records {
        let key = (
            r.task.clone(),
            kind_rank(&r.ood_kind),
            r.scenario.clone(),
            r.object.clone(),
            r.method,
        );
        let s = groups.entry(key).or_insert_with(|| ConditionSummary {
            task: r.task.clone(),
            scenario: r.scenario.clone(),
            object: r.object.clone(),
            ood_kind: r.ood_kind.clone(),
            method: r.method,
            rollouts: 0,
            successes: 0,
            subgoals: vec![0; r.subgoals.len()],
            feedback_total: 0,
            feedback_sq: 0,
            max_feedback: 0,
            incomplete: 0,
            ood_cycles: 0,
            fallback_cycles: 0,
            cycles: 0,
            horizon: r.horizon,
        });
        s.rollouts += 1;
        s.successes += usize::from(r.success);
        if s.subgoals.len() < r.subgoals.len() {
            s.subgoals.resize(r.subgoals.len(), 0);
        }
        for (acc, &hit) in s.subgoals.iter_mut().zip(&r.subgoals) {
            *acc += usize::from(hit);
        }
        s.feedback_total += r.feedback_total;
        s.feedback_sq += r.feedback_total * r.feedback_total;
        s.max_feedback = s.max_feedback.max(r.feedback_total);
        s.incomplete += usize::from(r.incomplete);
        s.ood_cycles += r.entries.iter().filter(|e| e.ood).count();
        s.fallback_cycles += r.entries.iter().filter(|e| e.fallback).count();
        s.cycles += r.entries.len();
    }
    groups.into_values().collect()
}

/// Pooled success over the conditions of one kind for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub rollouts: usize,
    pub successes: usize,
}

impl Pooled {
    pub fn rate(&self) -> f64 {
        ratio(self.successes, self.rollouts)
    }
}

pub fn pooled(conditions: &[ConditionSummary], task: &str, kind: &str, method: Method) -> Pooled {
    conditions
        .iter()
        .filter(|c| c.task == task && c.ood_kind == kind && c.method == method)
        .fold(
            Pooled {
                rollouts: 0,
                successes: 0,
            },
            |acc, c| Pooled {
                rollouts: acc.rollouts + c.rollouts,
                successes: acc.successes + c.successes,
            },
        )
}

/// Retrieval precision of the baselines over a task's ID and OOD-background
/// rollouts.
pub fn precision_for(records: &[RolloutRecord], task: &str) -> Result<PrecisionSummary, String> {
    let points = precision_points(
        records
            .iter()
            .filter(|r| r.task == task && (r.ood_kind == "none" || r.ood_kind == "background")),
    )?;
    Ok(precision::summarize(points))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub records: Vec<RolloutRecord>,
    pub conditions: Vec<ConditionSummary>,
    pub precision: PrecisionSummary,
}

/// Runs every condition of the task under every configured method, with the
/// bundled scripts as the expert.
pub fn run_bench(
    comp: &Components,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&str, Method, usize),
) -> Result<BenchResult, RuntimeError> {
    let mut records = Vec::new();
    for (scenario, object) in comp.config.conditions() {
        for &method in &cfg.methods {
            for i in 0..cfg.rollouts {
                let spec = RolloutSpec {
                    scenario: scenario.id.clone(),
                    object: object.name.clone(),
                    method,
                    seed: rollout_seed(cfg.seed, &scenario.id, &object.name, i),
                };
                records.push(run_scripted(comp, &spec, &cfg.intervention)?);
            }
            progress(
                &format!("{}/{}", scenario.id, object.name),
                method,
                cfg.rollouts,
            );
        }
    }
    records.sort_by_key(RolloutRecord::id);
    let conditions = summarize_conditions(&records);
    let precision = precision_for(&records, cfg.task.name()).map_err(RuntimeError::Analysis)?;
    Ok(BenchResult {
        config: cfg.clone(),
        records,
        conditions,
        precision,
    })
}
