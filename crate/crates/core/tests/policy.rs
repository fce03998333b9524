use aba_core::model::{Embedding, LabelGridImage, LabelId, Observation, Proprioception};
use aba_core::ood::{quantile, IdIndex};
use aba_core::policy::{encode, fit_policy, EncoderConfig, PolicyParams};
use aba_core::sim::{generate_dataset, Task, TaskConfig};
use proptest::prelude::*;

const GRID: usize = 8;

fn observation(image: LabelGridImage) -> Observation {
    Observation {
        image,
        proprio: Proprioception::new(2.0, 3.0, 0.0),
        timestep: 0,
    }
}

fn image_strategy() -> impl Strategy<Value = LabelGridImage> {
    prop::collection::vec(0u16..6, GRID * GRID).prop_map(|ids| {
        LabelGridImage::from_cells(GRID, GRID, ids.into_iter().map(LabelId).collect()).unwrap()
    })
}

fn cfg() -> EncoderConfig {
    EncoderConfig::new(4, GRID)
}

proptest! {
    /// Only per-block label fractions matter: moving a cell within its pooling
    /// block leaves the embedding unchanged.
    #[test]
    fn encoder_sees_block_fractions_only(img in image_strategy(), block in 0usize..16, a in 0usize..4, b in 0usize..4) {
        let side = GRID / 4;
        let (br, bc) = (block / 4 * side, block % 4 * side);
        let (ra, ca) = (br + a / side, bc + a % side);
        let (rb, cb) = (br + b / side, bc + b % side);
        let mut swapped = img.clone();
        let (x, y) = (img.get(ra, ca), img.get(rb, cb));
        swapped.set(ra, ca, y);
        swapped.set(rb, cb, x);
        let e1 = encode(&[&observation(img)], &cfg());
        let e2 = encode(&[&observation(swapped)], &cfg());
        prop_assert_eq!(e1, e2);
    }

    #[test]
    fn pooled_fractions_sum_to_one_per_block(img in image_strategy()) {
        let c = cfg();
        let e = encode(&[&observation(img)], &c);
        prop_assert_eq!(e.dim(), c.dim());
        let cells = c.pool * c.pool;
        for block in 0..cells {
            let total: f64 = (0..c.channels()).map(|ch| e.values[ch * cells + block]).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        prop_assert!(e.values[..c.image_dim()].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unregistered_labels_share_one_channel(img in image_strategy()) {
        // Ids 4 and 5 are both beyond the four known labels.
        let merged = LabelGridImage::from_cells(
            GRID,
            GRID,
            img.cells().iter().map(|&l| if l.0 == 5 { LabelId(4) } else { l }).collect(),
        )
        .unwrap();
        prop_assert_eq!(encode(&[&observation(img)], &cfg()), encode(&[&observation(merged)], &cfg()));
    }

    #[test]
    fn quantile_is_monotone_and_bounded(scores in prop::collection::vec(-1.0f64..1.0, 1..60), p in 0.0f64..0.5, q in 0.0f64..0.5) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = quantile(&scores, lo).unwrap();
        let b = quantile(&scores, hi).unwrap();
        prop_assert!(a <= b);
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= min && b <= max);
    }

    #[test]
    fn id_score_is_scale_invariant_and_bounded(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..10), q in prop::collection::vec(-1.0f64..1.0, 4), s in 0.1f64..10.0) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let index = IdIndex::new(rows.iter().map(Vec::as_slice)).unwrap();
        let score = index.id_score(&Embedding::new(q.clone())).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&score));
        let scaled = index.id_score(&Embedding::new(q.iter().map(|v| v * s).collect())).unwrap();
        prop_assert!((score - scaled).abs() < 1e-12);
        for r in &rows {
            prop_assert!((index.id_score(&Embedding::new(r.clone())).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    /// Raising the threshold can only flag more observations.
    #[test]
    fn flagged_set_grows_with_percentile(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..8), held in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 2..30), p in 0.0f64..0.25) {
        let mut index = IdIndex::new(rows.iter().map(Vec::as_slice)).unwrap();
        let held: Vec<Embedding> = held.into_iter().map(Embedding::new).collect();
        index.calibrate(&held, p, "h").unwrap();
        let low: Vec<bool> = held.iter().map(|z| index.is_ood(z).unwrap().0).collect();
        index.calibrate(&held, (p * 2.0).min(0.5), "h").unwrap();
        let high: Vec<bool> = held.iter().map(|z| index.is_ood(z).unwrap().0).collect();
        prop_assert!(low.iter().zip(&high).all(|(l, h)| !l || *h));
        index.calibrate(&held, 0.0, "h").unwrap();
        prop_assert!(held.iter().all(|z| !index.is_ood(z).unwrap().0), "p = 0 flags its own calibration set");
    }
}

#[test]
fn policy_replays_training_plans_without_noise() {
    let ds = generate_dataset(&TaskConfig::builtin(Task::SweepSort), 3, 2).unwrap();
    let policy = fit_policy(
        &ds,
        EncoderConfig::new(ds.label_registry.len(), 32),
        PolicyParams::default(),
    )
    .unwrap();
    for i in (0..policy.len()).step_by(7) {
        let z = Embedding::new(policy.embedding(i).to_vec());
        let neighbors = policy.neighbors(&z.values);
        assert_eq!(
            neighbors[0].1, 0.0,
            "a training embedding is its own nearest neighbor"
        );
        let w = policy.weights(&neighbors);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(
            w.windows(2).all(|p| p[0] >= p[1]),
            "weights fall with distance"
        );
        for seed in 0..4 {
            let s = policy.sample_with_noise(&z, 0.0, seed);
            assert!(neighbors.iter().any(|&(j, _)| j == s.index));
            assert_eq!(&s.plan, policy.plan(s.index));
            assert_eq!(s, policy.sample_with_noise(&z, 0.0, seed));
        }
    }
}

#[test]
fn noisy_samples_stay_within_action_bounds() {
    let ds = generate_dataset(&TaskConfig::builtin(Task::PlaceInCup), 2, 5).unwrap();
    let policy = fit_policy(
        &ds,
        EncoderConfig::new(ds.label_registry.len(), 32),
        PolicyParams::default(),
    )
    .unwrap();
    let z = Embedding::new(policy.embedding(10).to_vec());
    for seed in 0..20 {
        let plan = policy.sample_with_noise(&z, 0.5, seed).plan;
        assert!(plan.steps.iter().all(|a| a.is_valid()));
    }
}
