//! Proprioception pre-filter and alignment-ranked retrieval over the ID
//! dataset.

use serde::{Deserialize, Serialize};

use super::grammar::CorrespondenceDescription;
use super::mask::{alignment, functional_map_from_masks, FunctionalMap, Segmenter};
use super::CorrespondenceError;
use crate::model::{Dataset, LabelGridImage, ObsRef, Proprioception};

/// For each trajectory, the observation whose proprioception is nearest to
/// `query`, kept only if that distance is within `radius`.
pub fn filter_by_proprio(
    dataset: &Dataset,
    query: &Proprioception,
    radius: f64,
) -> Result<Vec<ObsRef>, CorrespondenceError> {
    if !(radius > 0.0) {
        return Err(CorrespondenceError::InvalidRadius(radius));
    }
    let mut out = Vec::new();
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (oi, (obs, _)) in traj.pairs.iter().enumerate() {
            let d = obs.proprio.distance(query);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((oi, d));
            }
        }
        if let Some((oi, d)) = best {
            if d <= radius {
                out.push(ObsRef {
                    trajectory: ti as u32,
                    timestep: oi as u32,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub obs: ObsRef,
    pub score: f64,
    pub map: FunctionalMap,
}

/// Candidates sorted by descending alignment, ties by trajectory then
/// timestep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub entries: Vec<RetrievalEntry>,
}

impl RankedRetrieval {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, m: usize) -> &[RetrievalEntry] {
        &self.entries[..m.min(self.entries.len())]
    }

    pub fn top_refs(&self, m: usize) -> Vec<ObsRef> {
        self.top(m).iter().map(|e| e.obs).collect()
    }

    /// Builds a ranking from precomputed scores (used by similarity-based
    /// retrieval, which has no functional map).
    pub fn from_scores(mut scored: Vec<(ObsRef, f64)>) -> RankedRetrieval {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankedRetrieval {
            entries: scored
                .into_iter()
                .map(|(obs, score)| RetrievalEntry {
                    obs,
                    score,
                    map: FunctionalMap::default(),
                })
                .collect(),
        }
    }
}

pub fn rank_retrieval(
    ood_image: &LabelGridImage,
    candidates: &[ObsRef],
    dataset: &Dataset,
    desc: &CorrespondenceDescription,
    segmenter: &Segmenter,
) -> RankedRetrieval {
    let ood_masks = segmenter.segment(ood_image);
    let mut entries: Vec<RetrievalEntry> = candidates
        .iter()
        .map(|&r| {
            let image = &dataset
                .observation(r)
                .expect("candidate refers to the dataset")
                .image;
            let map = if desc.is_empty() {
                FunctionalMap::default()
            } else {
                functional_map_from_masks(&ood_masks, &segmenter.segment(image), desc, segmenter)
            };
            RetrievalEntry {
                obs: r,
                score: alignment(&map),
                map,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.obs.cmp(&b.obs)));
    RankedRetrieval { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Action, ActionPlan, LabelGridImage, LabelId, LabelRegistry, Observation, Trajectory,
    };

    fn traj(qs: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            pairs: qs
                .iter()
                .enumerate()
                .map(|(t, &(x, y))| {
                    (
                        Observation {
                            image: LabelGridImage::filled(4, 4, LabelId(0)),
                            proprio: Proprioception::new(x, y, 0.0),
                            timestep: t as u32,
                        },
                        ActionPlan::new(vec![Action::ZERO]),
                    )
                })
                .collect(),
            environment_id: "e".into(),
            mode_label: "m".into(),
        }
    }

    #[test]
    fn keeps_nearest_within_radius() {
        let mut ds = Dataset::new(LabelRegistry::new(["bg"]), 4, 4, 1);
        // Distances to the query at (0, 0): 0.5, 0.2, 0.9.
        ds.trajectories
            .push(traj(&[(0.5, 0.0), (0.2, 0.0), (0.0, 0.9)]));
        let q = Proprioception::new(0.0, 0.0, 0.0);
        let kept = filter_by_proprio(&ds, &q, 0.3).unwrap();
        assert_eq!(
            kept,
            vec![ObsRef {
                trajectory: 0,
                timestep: 1
            }]
        );
        assert!(filter_by_proprio(&ds, &q, 0.1).unwrap().is_empty());
        assert!(filter_by_proprio(&ds, &q, 0.0).is_err());
    }

    #[test]
    fn exact_match_is_always_kept() {
        let mut ds = Dataset::new(LabelRegistry::new(["bg"]), 4, 4, 1);
        ds.trajectories.push(traj(&[(3.0, 1.0), (2.0, 2.0)]));
        let kept = filter_by_proprio(&ds, &Proprioception::new(2.0, 2.0, 0.0), 1e-9).unwrap();
        assert_eq!(
            kept,
            vec![ObsRef {
                trajectory: 0,
                timestep: 1
            }]
        );
    }
}
