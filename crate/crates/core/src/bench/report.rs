//! Plain-text and CSV reports. Output depends only on the records, so a
//! rerun with the same seed reproduces every byte.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::precision::PrecisionSummary;
use super::{
    pooled, precision_for, summarize_conditions, BenchConfig, BenchResult, ConditionSummary,
};
use crate::runtime::{read_records, write_records, Method};

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn fmt_corr(c: Option<f64>) -> String {
    c.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Fixed-width summary table followed by pooled rates and the precision
/// correlation.
pub fn summary_text(
    title: &str,
    conditions: &[ConditionSummary],
    precision: &PrecisionSummary,
) -> String {
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<10} {:<22} {:<12} {:<13} {:>4} {:>7} {:>17} {:>13} {:>6} {:>5} {:>6}",
        "kind",
        "scenario",
        "object",
        "method",
        "n",
        "success",
        "subgoals %",
        "fb/run +- se",
        "fb max",
        "inc",
        "ood %"
    )
    .unwrap();
    for c in conditions {
        let subgoals = (0..c.subgoals.len())
            .map(|i| pct(c.subgoal_rate(i)))
            .collect::<Vec<_>>()
            .join("/");
        let ood = if c.cycles == 0 {
            0.0
        } else {
            c.ood_cycles as f64 / c.cycles as f64
        };
        writeln!(
            out,
            "{:<10} {:<22} {:<12} {:<13} {:>4} {:>7} {:>17} {:>13} {:>6} {:>5} {:>6}",
            c.ood_kind,
            c.scenario,
            c.object,
            c.method.name(),
            c.rollouts,
            pct(c.success_rate()),
            subgoals,
            format!("{:.2} +- {:.2}", c.mean_feedback(), c.feedback_stderr()),
            c.max_feedback,
            c.incomplete,
            pct(ood),
        )
        .unwrap();
    }

    let mut tasks: Vec<&str> = conditions.iter().map(|c| c.task.as_str()).collect();
    tasks.dedup();
    writeln!(out).unwrap();
    writeln!(out, "pooled success % by kind").unwrap();
    writeln!(
        out,
        "{:<14} {:<10} {:>8} {:>13} {:>13} {:>8}",
        "task", "kind", "vanilla", "policy-embed", "visual-embed", "aba"
    )
    .unwrap();
    for task in tasks {
        for kind in ["none", "background", "object"] {
            let cells: Vec<String> = Method::ALL
                .iter()
                .map(|&m| {
                    let p = pooled(conditions, task, kind, m);
                    if p.rollouts == 0 {
                        "-".to_string()
                    } else {
                        pct(p.rate())
                    }
                })
                .collect();
            writeln!(
                out,
                "{:<14} {:<10} {:>8} {:>13} {:>13} {:>8}",
                task, kind, cells[0], cells[1], cells[2], cells[3]
            )
            .unwrap();
        }
    }

    writeln!(out).unwrap();
    writeln!(
        out,
        "baseline retrieval precision (ID + OOD-background): {} rollouts, correlation with cumulative subgoals {}",
        precision.points.len(),
        fmt_corr(precision.correlation)
    )
    .unwrap();
    out
}

pub fn conditions_csv(conditions: &[ConditionSummary]) -> String {
    let mut out = String::from(
        "task,scenario,object,ood_kind,method,rollouts,successes,success_rate,subgoal_a,subgoal_b,subgoal_c,mean_feedback,feedback_stderr,max_feedback,incomplete,ood_cycles,fallback_cycles,cycles,horizon\n",
    );
    for c in conditions {
        let sg = |i: usize| {
            if i < c.subgoals.len() {
                format!("{:.4}", c.subgoal_rate(i))
            } else {
                String::new()
            }
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.4},{},{},{},{:.4},{:.4},{},{},{},{},{},{}",
            c.task,
            c.scenario,
            c.object,
            c.ood_kind,
            c.method.name(),
            c.rollouts,
            c.successes,
            c.success_rate(),
            sg(0),
            sg(1),
            sg(2),
            c.mean_feedback(),
            c.feedback_stderr(),
            c.max_feedback,
            c.incomplete,
            c.ood_cycles,
            c.fallback_cycles,
            c.cycles,
            c.horizon
        )
        .unwrap();
    }
    out
}

pub fn precision_csv(precision: &PrecisionSummary) -> String {
    let mut out = String::from(
        "record,method,scenario,object,seed,precision,retrieval_steps,cumulative_subgoals\n",
    );
    for p in &precision.points {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{}",
            p.record,
            p.method.name(),
            p.scenario,
            p.object,
            p.seed,
            p.precision,
            p.retrieval_steps,
            p.cumulative_subgoals
        )
        .unwrap();
    }
    out
}

pub fn bench_title(result: &BenchResult) -> String {
    let c = &result.config;
    format!(
        "bench {}: task {}, seed {}, {} rollouts per condition, methods {}",
        c.id(),
        c.task.name(),
        c.seed,
        c.rollouts,
        c.methods
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(",")
    )
}

/// Writes `records.jsonl`, `conditions.csv`, `precision.csv`,
/// `summary.txt` and `bench.json` into `dir`.
pub fn write_reports(result: &BenchResult, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(&result.records, &dir.join("records.jsonl"))?;
    std::fs::write(
        dir.join("conditions.csv"),
        conditions_csv(&result.conditions),
    )?;
    std::fs::write(dir.join("precision.csv"), precision_csv(&result.precision))?;
    std::fs::write(
        dir.join("summary.txt"),
        summary_text(&bench_title(result), &result.conditions, &result.precision),
    )?;
    let meta = serde_json::to_string_pretty(&result.config).map_err(io::Error::other)?;
    std::fs::write(dir.join("bench.json"), meta + "\n")
}

/// Rebuilds a bench result from a run directory written by
/// [`write_reports`], recomputing every aggregate from the records.
pub fn load_run(dir: &Path) -> Result<BenchResult, String> {
    let meta = dir.join("bench.json");
    let text = std::fs::read_to_string(&meta).map_err(|e| format!("{}: {e}", meta.display()))?;
    let config: BenchConfig =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", meta.display()))?;
    let records = read_records(&dir.join("records.jsonl"))?;
    if let Some(r) = records.iter().find(|r| r.task != config.task.name()) {
        return Err(format!(
            "{}: task {} does not match bench task {}",
            r.id(),
            r.task,
            config.task.name()
        ));
    }
    let conditions = summarize_conditions(&records);
    let precision = precision_for(&records, config.task.name())?;
    Ok(BenchResult {
        config,
        records,
        conditions,
        precision,
    })
}
