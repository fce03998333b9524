//! Behavior-mode ambiguity: K-means over retrieved action plans, label
//! entropy, and the expert refinement loop.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{
    decode_description, rank_retrieval, CorrespondenceDescription, RankedRetrieval, Segmenter,
};
use crate::model::{squared_distance, ActionPlan, Dataset, LabelGridImage, LabelRegistry, ObsRef};
use crate::policy::PolicyModel;
use crate::rng;

pub const DEFAULT_CLUSTERS: usize = 2;
pub const DEFAULT_MAX_ENTROPY: f64 = 0.45;
pub const DEFAULT_MAX_QUERIES: usize = 5;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ModeError {
    #[error("need at least {needed} plans to fit {needed} clusters, got {got}")]
    TooFewPlans { needed: usize, got: usize },
    #[error("entropy of an empty subset is undefined")]
    EmptySubset,
    #[error("subset index {0} out of range")]
    BadIndex(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeClustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

impl ModeClustering {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.clusters()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Noise-free plans for each observation in `candidates`, one per observation.
pub fn sample_action_set(
    candidates: &[ObsRef],
    policy: &PolicyModel,
    seed: u64,
) -> Vec<ActionPlan> {
    candidates
        .iter()
        .map(|&r| action_for(r, policy, seed))
        .collect()
}

/// The noise-free plan the policy produces at a training observation. The
/// draw is seeded by the observation, so it is independent of call order.
pub fn action_for(r: ObsRef, policy: &PolicyModel, seed: u64) -> ActionPlan {
    let i = policy
        .index_of(r)
        .expect("observation belongs to the policy's dataset");
    let z = crate::model::Embedding::new(policy.embedding(i).to_vec());
    let s = rng::derive(seed, &[r.trajectory as u64, r.timestep as u64]);
    policy.sample_with_noise(&z, 0.0, s).plan
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> ModeClustering {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    hartigan_moves(points, &mut labels, &mut centroids);
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &centroids[l]))
        .sum();
    ModeClustering {
        labels,
        centroids,
        inertia,
    }
}

/// Single-point moves that lower the within-cluster sum of squares once
/// centroids follow their members. Lloyd iterations can stop at partitions
/// that such a move still improves.
fn hartigan_moves(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = centroid_of(points, labels, c);
        }
    }
    for _ in 0..KMEANS_MAX_ITER {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = labels[i];
            if counts[from] < 2 {
                continue;
            }
            let n_from = counts[from] as f64;
            let removal = n_from / (n_from - 1.0) * squared_distance(p, &centroids[from]);
            let target = (0..k).filter(|&c| c != from).min_by(|&a, &b| {
                let cost = |c: usize| {
                    let n = counts[c] as f64;
                    if counts[c] == 0 {
                        0.0
                    } else {
                        n / (n + 1.0) * squared_distance(p, &centroids[c])
                    }
                };
                cost(a).total_cmp(&cost(b))
            });
            let Some(to) = target else { continue };
            let n_to = counts[to] as f64;
            let addition = if counts[to] == 0 {
                0.0
            } else {
                n_to / (n_to + 1.0) * squared_distance(p, &centroids[to])
            };
            if addition < removal * (1.0 - 1e-12) {
                labels[i] = to;
                counts[from] -= 1;
                counts[to] += 1;
                centroids[from] = centroid_of(points, labels, from);
                centroids[to] = centroid_of(points, labels, to);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn centroid_of(points: &[Vec<f64>], labels: &[usize], cluster: usize) -> Vec<f64> {
    let mut sum = vec![0.0; points[0].len()];
    let mut n = 0;
    for (p, _) in points.iter().zip(labels).filter(|(_, &l)| l == cluster) {
        n += 1;
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    sum.into_iter().map(|s| s / n as f64).collect()
}

/// K-means with k-means++ seeding and single-point refinement; the best of `KMEANS_RESTARTS` runs by
/// inertia is returned.
pub fn cluster_points(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<ModeClustering, ModeError> {
    if k == 0 || points.len() < k {
        return Err(ModeError::TooFewPlans {
            needed: k.max(1),
            got: points.len(),
        });
    }
    let mut rng = rng::rng(seed);
    let mut best: Option<ModeClustering> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn cluster_modes(
    plans: &[ActionPlan],
    k: usize,
    seed: u64,
) -> Result<ModeClustering, ModeError> {
    let points: Vec<Vec<f64>> = plans.iter().map(ActionPlan::flatten).collect();
    cluster_points(&points, k, seed)
}

/// Shannon entropy (nats) of the cluster labels at `subset`.
pub fn mode_entropy(clustering: &ModeClustering, subset: &[usize]) -> Result<f64, ModeError> {
    if subset.is_empty() {
        return Err(ModeError::EmptySubset);
    }
    let mut counts = vec![0usize; clustering.clusters()];
    for &i in subset {
        let l = *clustering.labels.get(i).ok_or(ModeError::BadIndex(i))?;
        counts[l] += 1;
    }
    Ok(entropy_of_counts(&counts))
}

pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// What an expert is shown when asked to refine the description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertQuery {
    pub timestep: u32,
    /// 1-based index of the query within this refinement.
    pub round: usize,
    pub entropy: f64,
    pub description: String,
    pub top: Vec<(ObsRef, f64)>,
    pub clusters: Vec<ClusterSummary>,
    /// Label names present in the current observation.
    pub scene_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    /// Members among the top-M retrievals.
    pub in_top: usize,
    /// Flattened plan of the member nearest the centroid.
    pub representative: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertFailure {
    #[error("expert timed out")]
    Timeout,
    #[error("expert unavailable: {0}")]
    Unavailable(String),
}

/// Anything that answers refinement queries with feature-grammar text.
pub trait Expert {
    fn respond(&mut self, query: &ExpertQuery) -> Result<String, ExpertFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_entropy: f64,
    pub max_queries: usize,
    /// Top retrievals whose plans are checked for agreement.
    pub top_m: usize,
    /// Queries asked even when already confident (the initial instruction).
    pub min_queries: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_entropy: DEFAULT_MAX_ENTROPY,
            max_queries: DEFAULT_MAX_QUERIES,
            top_m: 5,
            min_queries: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Confident,
    Pass,
    Budget,
    Aborted,
}

/// A single expert interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub query: ExpertQuery,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutcome {
    pub description: CorrespondenceDescription,
    pub retrieval: RankedRetrieval,
    pub entropy_trace: Vec<f64>,
    pub queries: usize,
    pub stop: StopReason,
    pub events: Vec<FeedbackEvent>,
}

/// Everything about the current OOD observation that refinement needs.
pub struct RefineContext<'a> {
    pub timestep: u32,
    pub image: &'a LabelGridImage,
    pub candidates: &'a [ObsRef],
    pub plans: &'a [ActionPlan],
    pub clustering: &'a ModeClustering,
    pub dataset: &'a Dataset,
    pub segmenter: &'a Segmenter,
    pub registry: &'a LabelRegistry,
}

impl RefineContext<'_> {
    fn entropy_of(&self, ranking: &RankedRetrieval, m: usize) -> f64 {
        let positions: Vec<usize> = ranking
            .top(m)
            .iter()
            .map(|e| {
                self.candidates
                    .binary_search(&e.obs)
                    .expect("ranked entries come from the candidates")
            })
            .collect();
        mode_entropy(self.clustering, &positions).expect("top-M is non-empty")
    }

    fn query(
        &self,
        round: usize,
        entropy: f64,
        desc: &CorrespondenceDescription,
        ranking: &RankedRetrieval,
        m: usize,
    ) -> ExpertQuery {
        let top = ranking.top(m);
        let in_top: Vec<usize> = top
            .iter()
            .map(|e| {
                self.clustering.labels[self
                    .candidates
                    .binary_search(&e.obs)
                    .expect("from the candidates")]
            })
            .collect();
        let clusters = (0..self.clustering.clusters())
            .map(|c| {
                let members = self
                    .clustering
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == c);
                let rep = members
                    .map(|(i, _)| {
                        let flat = self.plans[i].flatten();
                        (squared_distance(&flat, &self.clustering.centroids[c]), flat)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, f)| f)
                    .unwrap_or_default();
                ClusterSummary {
                    cluster: c,
                    size: self.clustering.labels.iter().filter(|&&l| l == c).count(),
                    in_top: in_top.iter().filter(|&&l| l == c).count(),
                    representative: rep,
                }
            })
            .collect();
        ExpertQuery {
            timestep: self.timestep,
            round,
            entropy,
            description: desc.to_string(),
            top: top.iter().map(|e| (e.obs, e.score)).collect(),
            clusters,
            scene_labels: self
                .image
                .labels()
                .into_iter()
                .filter_map(|l| self.registry.name(l).map(str::to_string))
                .collect(),
        }
    }
}

/// Ranks with the current description and asks the expert for more features
/// while the top-M plans disagree. `ctx.candidates` must be sorted.
pub fn refine_until_confident(
    ctx: &RefineContext<'_>,
    initial: CorrespondenceDescription,
    expert: &mut dyn Expert,
    cfg: &RefineConfig,
) -> RefinementOutcome {
    debug_assert!(ctx.candidates.windows(2).all(|w| w[0] < w[1]));
    let mut desc = initial;
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut queries = 0usize;
    let mut passed = false;
    loop {
        let ranking = rank_retrieval(ctx.image, ctx.candidates, ctx.dataset, &desc, ctx.segmenter);
        let h = ctx.entropy_of(&ranking, cfg.top_m);
        trace.push(h);
        let stop = if passed {
            Some(StopReason::Pass)
        } else if h <= cfg.max_entropy && queries >= cfg.min_queries {
            Some(StopReason::Confident)
        } else if queries >= cfg.max_queries {
            Some(StopReason::Budget)
        } else {
            None
        };
        if let Some(stop) = stop {
            return RefinementOutcome {
                description: desc,
                retrieval: ranking,
                entropy_trace: trace,
                queries,
                stop,
                events,
            };
        }
        let query = ctx.query(queries + 1, h, &desc, &ranking, cfg.top_m);
        queries += 1;
        let decoded = expert
            .respond(&query)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                decode_description(&text, ctx.registry)
                    .map(|d| (text, d))
                    .map_err(|e| e.to_string())
            });
        match decoded {
            Ok((text, more)) => {
                events.push(FeedbackEvent {
                    query,
                    response: Some(text),
                });
                passed = more.is_pass();
                desc.extend(&more);
            }
            Err(_) => {
                events.push(FeedbackEvent {
                    query,
                    response: None,
                });
                return RefinementOutcome {
                    description: desc,
                    retrieval: ranking,
                    entropy_trace: trace,
                    queries,
                    stop: StopReason::Aborted,
                    events,
                };
            }
        }
    }
}
