//! Retrieval precision of the similarity baselines against the
//! expert-guided reference, and its correlation with task progress.

use serde::{Deserialize, Serialize};

use crate::runtime::{Method, RolloutRecord};

/// One baseline rollout's mean retrieval precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub record: String,
    pub method: Method,
    pub scenario: String,
    pub object: String,
    pub seed: u64,
    pub precision: f64,
    pub retrieval_steps: usize,
    pub cumulative_subgoals: usize,
}

/// Fraction of `retrieved` that also appears in `reference`, over the
/// reference size.
pub fn overlap_precision<T: PartialEq>(retrieved: &[T], reference: &[T]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let hits = retrieved.iter().filter(|r| reference.contains(r)).count();
    hits as f64 / reference.len() as f64
}

/// Precision points for every baseline rollout that retrieved at least
/// once. A retrieval step without a reference is an error naming the record.
pub fn precision_points<'a>(
    records: impl IntoIterator<Item = &'a RolloutRecord>,
) -> Result<Vec<PrecisionPoint>, String> {
    let mut out = Vec::new();
    for r in records {
        if !r.method.is_similarity_baseline() {
            continue;
        }
        let mut sum = 0.0;
        let mut steps = 0;
        for e in r.entries.iter().filter(|e| !e.retrieval.is_empty()) {
            let reference = e.reference.as_ref().ok_or_else(|| {
                format!(
                    "{} at t={}: retrieval without a reference",
                    r.id(),
                    e.timestep
                )
            })?;
            let retrieved: Vec<_> = e.retrieval.iter().map(|(o, _)| *o).collect();
            sum += overlap_precision(&retrieved, reference);
            steps += 1;
        }
        if steps == 0 {
            continue;
        }
        out.push(PrecisionPoint {
            record: r.id(),
            method: r.method,
            scenario: r.scenario.clone(),
            object: r.object.clone(),
            seed: r.seed,
            precision: sum / steps as f64,
            retrieval_steps: steps,
            cumulative_subgoals: r.cumulative_subgoals(),
        });
    }
    Ok(out)
}

/// Sample Pearson correlation; None for fewer than two points or zero
/// variance on either side.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    pub points: Vec<PrecisionPoint>,
    pub correlation: Option<f64>,
}

pub fn summarize(points: Vec<PrecisionPoint>) -> PrecisionSummary {
    let xs: Vec<f64> = points.iter().map(|p| p.precision).collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|p| p.cumulative_subgoals as f64)
        .collect();
    PrecisionSummary {
        correlation: pearson(&xs, &ys),
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn precision_counts_shared_entries() {
        assert_eq!(overlap_precision(&[1, 2, 3], &[3, 4, 5, 1, 9]), 0.4);
        assert_eq!(overlap_precision::<u8>(&[], &[]), 0.0);
    }
}
