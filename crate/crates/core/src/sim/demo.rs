//! Scripted demonstrators and ID dataset generation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{Behavior, GraspSide, OodKind, Scenario, TaskConfig};
use super::world::{evaluate, observe, step, Scene};
use super::SimError;
use crate::model::{Action, ActionPlan, Dataset, Trajectory, DEFAULT_PLAN_LEN};
use crate::rng;

/// Zero actions appended to every demonstration.
pub const IDLE_STEPS: usize = 2;

/// Uniform integer object center column from the scenario's placement band.
pub fn sample_placement(scenario: &Scenario, seed: u64) -> i32 {
    let (lo, hi) = scenario.placement;
    rng::rng(rng::derive(seed, &[rng::hash_str("placement")])).random_range(lo..=hi)
}

fn moves(from: f64, to: f64, horizontal: bool, out: &mut Vec<Action>) {
    let mut cur = from;
    while (to - cur).abs() > 1e-9 {
        let d = (to - cur).clamp(-1.0, 1.0);
        cur += d;
        out.push(if horizontal {
            Action::new(d, 0.0, 0.0)
        } else {
            Action::new(0.0, d, 0.0)
        });
    }
}

/// The noise-free action sequence that solves `scene`.
pub fn demonstrator_actions(scene: &Scene) -> Result<Vec<Action>, SimError> {
    let obj = &scene.object;
    let (left, top) = scene.object_start;
    let (w, h) = (obj.width as f64, obj.height as f64);
    let behavior = obj.behavior;
    let grasp_row = match behavior.grasp_side() {
        GraspSide::Above => top - 1.0,
        GraspSide::Below => top + h,
    };
    let grasp_col = left + (obj.width / 2) as f64;
    let (sx, sy) = scene.agent_start;
    let max = (scene.grid - 1) as f64;
    if grasp_row < 0.0 || grasp_row > max {
        return Err(SimError::Unreachable(format!(
            "{}: grasp row {grasp_row} outside the grid",
            obj.name
        )));
    }

    let mut out = Vec::new();
    moves(sy, grasp_row, false, &mut out);
    moves(sx, grasp_col, true, &mut out);
    out.push(Action::new(0.0, 0.0, 1.0));

    // Object center relative to the agent once attached.
    let cx_off = left - grasp_col + (w - 1.0) / 2.0;
    let cy_off = top - grasp_row + (h - 1.0) / 2.0;
    match behavior {
        Behavior::DropTop | Behavior::DropFront => {
            let cup = scene.cup.as_ref().expect("place-in-cup has a cup");
            let (ccx, ccy) = cup.outline.interior().center();
            let target_x = (ccx - cx_off).round();
            let target_y = (ccy - cy_off).round();
            if behavior == Behavior::DropTop {
                // Lift clear of the cup rim, traverse, lower in.
                let bottom_off = top - grasp_row + h - 1.0;
                let lift = (cup.outline.top as f64 - 1.0 - bottom_off).min(grasp_row);
                moves(grasp_row, lift, false, &mut out);
                moves(grasp_col, target_x, true, &mut out);
                moves(lift, target_y, false, &mut out);
            } else {
                moves(grasp_row, target_y, false, &mut out);
                moves(grasp_col, target_x, true, &mut out);
            }
        }
        Behavior::SweepUp | Behavior::SweepDown => {
            let goals = scene.sweep.expect("sweep-sort has goals");
            let target = if behavior == Behavior::SweepUp {
                goals.up_target
            } else {
                goals.down_target
            };
            moves(grasp_row, (target - cy_off).round(), false, &mut out);
        }
    }
    out.push(Action::new(0.0, 0.0, -1.0));
    // Rest after releasing so that idle states after the goal are covered.
    out.extend(std::iter::repeat_n(Action::ZERO, IDLE_STEPS));
    if out.len() as u32 > scene.horizon {
        return Err(SimError::Unreachable(format!(
            "{}: demonstration needs {} steps, horizon is {}",
            obj.name,
            out.len(),
            scene.horizon
        )));
    }
    Ok(out)
}

/// Runs the demonstrator on `scene`. With `noise_sd > 0` each executed action
/// is perturbed by Gaussian noise while the recorded plans stay noise-free.
pub fn demonstrate(
    scene: &Scene,
    mode_label: &str,
    noise_sd: f64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let actions = demonstrator_actions(scene)?;
    let mut noise_rng = rng::rng(rng::derive(seed, &[rng::hash_str("execution-noise")]));
    let normal = Normal::new(0.0, noise_sd.max(0.0)).expect("finite standard deviation");
    let mut state = scene.initial_state();
    let mut pairs = Vec::with_capacity(actions.len() + 1);
    for t in 0..=actions.len() {
        let obs = observe(&state, scene)?;
        let steps = (t..t + DEFAULT_PLAN_LEN)
            .map(|i| actions.get(i).copied().unwrap_or(Action::ZERO))
            .collect();
        pairs.push((obs, ActionPlan::new(steps)));
        if let Some(&a) = actions.get(t) {
            let executed = if noise_sd > 0.0 {
                Action::new(
                    a.dx + normal.sample(&mut noise_rng),
                    a.dy + normal.sample(&mut noise_rng),
                    a.dgripper + normal.sample(&mut noise_rng),
                )
            } else {
                a
            };
            state = step(&state, executed, scene);
        }
    }
    if noise_sd == 0.0 && !evaluate(&state, scene).success {
        return Err(SimError::Unreachable(format!(
            "demonstration of {} in {} does not reach the goal",
            scene.object.name, scene.scenario_id
        )));
    }
    Ok(Trajectory {
        pairs,
        environment_id: scene.scenario_id.clone(),
        mode_label: mode_label.to_string(),
    })
}

/// Noise-free demonstration of `scenario`'s object with a seeded placement.
pub fn scripted_demonstrator(
    config: &TaskConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<Trajectory, SimError> {
    if scenario.ood_kind != OodKind::None {
        return Err(SimError::Config(format!(
            "scenario {} is not in-distribution",
            scenario.id
        )));
    }
    let object = &scenario.objects[0];
    let scene = Scene::new(
        config,
        scenario,
        &object.name,
        sample_placement(scenario, seed),
    )?;
    demonstrate(&scene, object.behavior.label(), 0.0, seed)
}

/// Builds the ID dataset: `demos_per_mode` demonstrations of every ID
/// scenario, interleaved so consecutive trajectories alternate modes.
pub fn generate_dataset(
    config: &TaskConfig,
    demos_per_mode: usize,
    seed: u64,
) -> Result<Dataset, SimError> {
    let mut ds = Dataset::new(
        config.dataset_registry(),
        config.grid,
        config.grid,
        DEFAULT_PLAN_LEN,
    );
    let id = config.id_scenarios();
    for j in 0..demos_per_mode {
        for sc in &id {
            let demo_seed = rng::derive(seed, &[rng::hash_str(&sc.id), j as u64]);
            let traj = scripted_demonstrator(config, sc, demo_seed).map_err(|e| {
                SimError::Unreachable(format!("{e} (demo {j} of {}, seed {demo_seed})", sc.id))
            })?;
            ds.trajectories.push(traj);
        }
    }
    ds.config_hash = dataset_hash(config, demos_per_mode, seed);
    Ok(ds)
}

pub fn dataset_hash(config: &TaskConfig, demos_per_mode: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config.source_hash.as_bytes());
    h.update(demos_per_mode.to_le_bytes());
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

/// Held-out ID trajectories for threshold calibration: fresh placements and
/// noisy execution, so they are never exact copies of training data.
pub fn held_out_trajectories(
    config: &TaskConfig,
    count: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    let id = config.id_scenarios();
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let sc = id[j % id.len()];
        let s = rng::derive(seed, &[rng::hash_str("held-out"), j as u64]);
        let object = &sc.objects[0];
        let scene = Scene::new(config, sc, &object.name, sample_placement(sc, s))?;
        out.push(demonstrate(&scene, object.behavior.label(), noise_sd, s)?);
    }
    Ok(out)
}
