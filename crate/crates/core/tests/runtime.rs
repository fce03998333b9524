use std::sync::OnceLock;

use aba_core::bench::precision::{overlap_precision, precision_points, summarize};
use aba_core::bench::report::{
    conditions_csv, load_run, precision_csv, summary_text, write_reports,
};
use aba_core::bench::{run_bench, summarize_conditions, BenchConfig};
use aba_core::model::{Action, ObsRef};
use aba_core::modes::{Expert, ExpertFailure, ExpertQuery};
use aba_core::runtime::{
    read_records, run_rollout, run_scripted, write_records, Components, InterventionConfig, Method,
    RolloutRecord, RolloutSpec, StepEntry, Unmonitored,
};
use aba_core::sim::{Task, TaskConfig};

fn place() -> &'static Components {
    static COMP: OnceLock<Components> = OnceLock::new();
    COMP.get_or_init(|| {
        Components::build(TaskConfig::builtin(Task::PlaceInCup), 20, 0.02, 3).unwrap()
    })
}

fn spec(scenario: &str, object: &str, method: Method, seed: u64) -> RolloutSpec {
    RolloutSpec {
        scenario: scenario.into(),
        object: object.into(),
        method,
        seed,
    }
}

/// Fails the test if consulted.
struct Forbidden;

impl Expert for Forbidden {
    fn respond(&mut self, _: &ExpertQuery) -> Result<String, ExpertFailure> {
        panic!("expert consulted");
    }
}

struct Abort;

impl Expert for Abort {
    fn respond(&mut self, _: &ExpertQuery) -> Result<String, ExpertFailure> {
        Err(ExpertFailure::Timeout)
    }
}

#[test]
fn vanilla_and_baselines_never_consult_the_expert() {
    let comp = place();
    for method in [Method::Vanilla, Method::PolicyEmbed, Method::VisualEmbed] {
        let r = run_rollout(
            comp,
            &spec("place-ood-pencil", "pencil", method, 5),
            &InterventionConfig::default(),
            &mut Forbidden,
            &mut Unmonitored,
        )
        .unwrap();
        assert_eq!(r.feedback_total, 0);
        if method == Method::Vanilla {
            assert!(r
                .entries
                .iter()
                .all(|e| e.retrieval.is_empty() && e.reference.is_none()));
        }
    }
}

#[test]
fn nominal_cycles_are_never_intervened() {
    let comp = place();
    for method in Method::ALL {
        for (sc, obj) in [("place-id-pen", "pen"), ("place-ood-pencil", "pencil")] {
            let r = run_scripted(
                comp,
                &spec(sc, obj, method, 9),
                &InterventionConfig::default(),
            )
            .unwrap();
            for e in r.entries.iter().filter(|e| !e.ood) {
                assert!(
                    e.retrieval.is_empty() && e.feedback.is_empty(),
                    "{} t={}",
                    r.id(),
                    e.timestep
                );
            }
        }
    }
}

#[test]
fn rollouts_are_reproducible_and_valid() {
    let comp = place();
    for method in Method::ALL {
        let s = spec("place-ood-battery", "battery", method, 21);
        let a = run_scripted(comp, &s, &InterventionConfig::default()).unwrap();
        let b = run_scripted(comp, &s, &InterventionConfig::default()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.steps() <= a.horizon);
        // Subgoals are cumulative: C implies B implies A.
        let first_miss = a
            .subgoals
            .iter()
            .position(|&g| !g)
            .unwrap_or(a.subgoals.len());
        assert!(
            a.subgoals[first_miss..].iter().all(|&g| !g),
            "{:?}",
            a.subgoals
        );
        assert_eq!(a.success, a.subgoals.iter().all(|&g| g));
    }
}

#[test]
fn expert_abort_marks_the_rollout_incomplete() {
    let r = run_rollout(
        place(),
        &spec("place-ood-pencil", "pencil", Method::Aba, 2),
        &InterventionConfig::default(),
        &mut Abort,
        &mut Unmonitored,
    )
    .unwrap();
    assert!(r.incomplete);
    assert!(!r.success);
    r.validate().unwrap();
}

#[test]
fn aba_asks_for_an_initial_description_on_unfamiliar_objects() {
    let r = run_scripted(
        place(),
        &spec("place-ood-pencil", "pencil", Method::Aba, 4),
        &InterventionConfig::default(),
    )
    .unwrap();
    assert!(r.feedback_total >= 1);
    assert!(
        r.description.starts_with("match pencil with pen"),
        "{}",
        r.description
    );
    let first = r.entries.iter().find(|e| e.ood).expect("an OOD cycle");
    assert!(!first.feedback.is_empty());
    assert!(!first.retrieval.is_empty());
}

#[test]
fn records_roundtrip_through_jsonl() {
    let comp = place();
    let records: Vec<RolloutRecord> = [Method::Aba, Method::VisualEmbed]
        .into_iter()
        .map(|m| {
            run_scripted(
                comp,
                &spec("place-ood-cloth", "marker", m, 8),
                &InterventionConfig::default(),
            )
            .unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_records(&records, &path).unwrap();
    let mut back = read_records(&path).unwrap();
    back.sort_by_key(RolloutRecord::id);
    let mut want = records.clone();
    want.sort_by_key(RolloutRecord::id);
    assert_eq!(back, want);
}

fn entry(t: u32, retrieved: &[u32], reference: Option<&[u32]>) -> StepEntry {
    let refs = |ids: &[u32]| -> Vec<ObsRef> {
        ids.iter()
            .map(|&i| ObsRef {
                trajectory: i,
                timestep: 0,
            })
            .collect()
    };
    StepEntry {
        timestep: t,
        obs_digest: String::new(),
        id_score: 0.5,
        ood: !retrieved.is_empty(),
        retrieval: refs(retrieved).into_iter().map(|r| (r, 1.0)).collect(),
        reference: reference.map(refs),
        fallback: false,
        entropy_trace: Vec::new(),
        refinement_stop: None,
        feedback: Vec::new(),
        actions: vec![Action::ZERO],
    }
}

fn record(
    method: Method,
    seed: u64,
    entries: Vec<StepEntry>,
    subgoals: Vec<bool>,
) -> RolloutRecord {
    RolloutRecord {
        task: "place-in-cup".into(),
        scenario: "place-id-pen".into(),
        object: "pen".into(),
        ood_kind: "none".into(),
        method,
        seed,
        placement: 10,
        horizon: 120,
        success: subgoals.iter().all(|&g| g),
        entries,
        subgoals,
        feedback_total: 0,
        description: String::new(),
        incomplete: false,
        error: None,
    }
}

#[test]
fn precision_of_constructed_records() {
    let same = record(
        Method::PolicyEmbed,
        1,
        vec![
            entry(0, &[1, 2, 3, 4], Some(&[1, 2, 3, 4])),
            entry(8, &[5, 6, 7, 8], Some(&[8, 7, 6, 5])),
        ],
        vec![true, true, true],
    );
    let disjoint = record(
        Method::VisualEmbed,
        2,
        vec![entry(0, &[1, 2, 3, 4], Some(&[5, 6, 7, 8]))],
        vec![true, false, false],
    );
    let half = record(
        Method::PolicyEmbed,
        3,
        vec![
            entry(0, &[1, 2, 3, 4], Some(&[3, 4, 5, 6])),
            entry(8, &[9, 10, 11, 12], Some(&[9, 12, 1, 2])),
        ],
        vec![true, true, false],
    );
    // ABA and vanilla rollouts, and cycles without retrieval, are skipped.
    let aba = record(
        Method::Aba,
        4,
        vec![entry(0, &[1], Some(&[1]))],
        vec![true, true, true],
    );
    let idle = record(
        Method::PolicyEmbed,
        5,
        vec![entry(0, &[], None)],
        vec![false, false, false],
    );

    let records = [same, disjoint, half, aba, idle];
    let points = precision_points(&records).unwrap();
    let got: Vec<(u64, f64, usize)> = points
        .iter()
        .map(|p| (p.seed, p.precision, p.cumulative_subgoals))
        .collect();
    assert_eq!(got, vec![(1, 1.0, 3), (2, 0.0, 1), (3, 0.5, 2)]);
    assert_eq!(points[0].retrieval_steps, 2);
    assert!((summarize(points).correlation.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(overlap_precision(&[1, 2], &[2, 1]), 1.0);
}

#[test]
fn retrieval_without_a_reference_names_the_rollout() {
    let bad = record(
        Method::VisualEmbed,
        77,
        vec![entry(16, &[1, 2], None)],
        vec![true, false, false],
    );
    let err = precision_points([&bad]).unwrap_err();
    assert!(err.contains(&bad.id()) && err.contains("t=16"), "{err}");
}

#[test]
fn empty_reports_have_headers_only() {
    let conditions = summarize_conditions(&[]);
    assert!(conditions.is_empty());
    assert_eq!(conditions_csv(&conditions).lines().count(), 1);
    let precision = summarize(Vec::new());
    assert_eq!(precision_csv(&precision).lines().count(), 1);
    assert!(summary_text("empty", &conditions, &precision).contains("undefined"));
}

#[test]
fn condition_summaries_are_recomputable_from_records() {
    let comp = place();
    let mut cfg = BenchConfig::new(Task::PlaceInCup, 2, 13);
    cfg.methods = vec![Method::Vanilla, Method::Aba];
    let result = run_bench(comp, &cfg, |_, _, _| {}).unwrap();
    assert_eq!(result.records.len(), comp.config.conditions().len() * 2 * 2);
    for c in &result.conditions {
        let rs: Vec<&RolloutRecord> = result
            .records
            .iter()
            .filter(|r| r.scenario == c.scenario && r.object == c.object && r.method == c.method)
            .collect();
        assert_eq!(c.rollouts, rs.len());
        assert_eq!(c.successes, rs.iter().filter(|r| r.success).count());
        let mean = rs.iter().map(|r| r.feedback_total as f64).sum::<f64>() / rs.len() as f64;
        assert_eq!(c.mean_feedback(), mean);
        assert!((0.0..=1.0).contains(&c.success_rate()));
    }

    // Reports written, reloaded and rewritten are byte-identical.
    let dir = tempfile::tempdir().unwrap();
    write_reports(&result, dir.path()).unwrap();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    let before: Vec<Vec<u8>> = [
        "summary.txt",
        "conditions.csv",
        "precision.csv",
        "records.jsonl",
        "bench.json",
    ]
    .iter()
    .map(|n| read(n))
    .collect();
    let again = load_run(dir.path()).unwrap();
    assert_eq!(again, result);
    write_reports(&again, dir.path()).unwrap();
    let after: Vec<Vec<u8>> = [
        "summary.txt",
        "conditions.csv",
        "precision.csv",
        "records.jsonl",
        "bench.json",
    ]
    .iter()
    .map(|n| read(n))
    .collect();
    assert_eq!(before, after);
}
