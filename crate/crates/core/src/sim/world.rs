//! Kinematic world state, rendering to label grids, and ground-truth
//! segmentation.

use serde::{Deserialize, Serialize};

use super::config::{Behavior, Cup, GraspSide, ObjectSpec, Scenario, SweepGoals, Task, TaskConfig};
use super::SimError;
use crate::correspondence::SegmentMask;
use crate::model::{Action, LabelGridImage, LabelId, Observation, Proprioception};

/// Cells within this Euclidean distance of the agent can be grasped.
pub const GRASP_RADIUS: f64 = 2.0;

/// Everything static about one episode: layout, labels, the single
/// manipulable object and where it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub task: Task,
    pub scenario_id: String,
    pub grid: usize,
    pub horizon: u32,
    pub background: LabelId,
    pub agent_label: LabelId,
    /// Fixture cells drawn between background and object.
    pub fixtures: Vec<(usize, usize, LabelId)>,
    pub object: ObjectSpec,
    pub object_start: (f64, f64),
    pub agent_start: (f64, f64),
    pub cup: Option<Cup>,
    pub sweep: Option<SweepGoals>,
}

impl Scene {
    /// Builds the episode for `object` in `scenario`, with the object's center
    /// column at `center_col`.
    pub fn new(
        config: &TaskConfig,
        scenario: &Scenario,
        object: &str,
        center_col: i32,
    ) -> Result<Scene, SimError> {
        let object = scenario
            .object(object)
            .ok_or_else(|| SimError::UnknownObject {
                scenario: scenario.id.clone(),
                object: object.to_string(),
            })?
            .clone();
        let left = center_col - (object.width / 2) as i32;
        let top = config.object_top(object.height);
        if left < 0
            || top < 0
            || left as usize + object.width > config.grid
            || top as usize + object.height > config.grid
        {
            return Err(SimError::OutOfBounds(format!(
                "{} at center column {center_col}",
                object.name
            )));
        }
        let mut fixtures = Vec::new();
        if let Some(cup) = &config.cup {
            let r = cup.outline;
            for row in r.top..=r.bottom() {
                for col in r.left..=r.right() {
                    let edge =
                        row == r.top || row == r.bottom() || col == r.left || col == r.right();
                    // The cup is open on top (for drops) and on its left side
                    // (for insertion from the front).
                    let open = row == r.top || (col == r.left && row < r.bottom());
                    if edge && !open {
                        fixtures.push((row as usize, col as usize, cup.label));
                    }
                }
            }
        }
        Ok(Scene {
            task: config.task,
            scenario_id: scenario.id.clone(),
            grid: config.grid,
            horizon: config.horizon,
            background: scenario.background,
            agent_label: config.agent,
            fixtures,
            object,
            object_start: (left as f64, top as f64),
            agent_start: config.agent_start,
            cup: config.cup.clone(),
            sweep: config.sweep,
        })
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            agent: Proprioception::new(self.agent_start.0, self.agent_start.1, 0.0),
            object: self.object_start,
            attached: false,
            offset: (0.0, 0.0),
            step: 0,
            grasp: None,
        }
    }

    pub fn ground_truth(&self) -> Behavior {
        self.object.behavior
    }

    fn object_center(&self, pos: (f64, f64)) -> (f64, f64) {
        (
            pos.0 + (self.object.width as f64 - 1.0) / 2.0,
            pos.1 + (self.object.height as f64 - 1.0) / 2.0,
        )
    }
}

/// Record of the moment an object was grasped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspEvent {
    pub step: u32,
    /// None when the agent was level with the object's midline.
    pub side: Option<GraspSide>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub agent: Proprioception,
    /// Top-left corner of the object, in grid units.
    pub object: (f64, f64),
    pub attached: bool,
    /// Object position relative to the agent while attached.
    pub offset: (f64, f64),
    pub step: u32,
    /// First grasp of the episode.
    pub grasp: Option<GraspEvent>,
}

impl WorldState {
    fn object_cells(&self, scene: &Scene) -> impl Iterator<Item = (i64, i64)> {
        let left = self.object.0.round() as i64;
        let top = self.object.1.round() as i64;
        let (w, h) = (scene.object.width as i64, scene.object.height as i64);
        (0..h).flat_map(move |r| (0..w).map(move |c| (top + r, left + c)))
    }

    pub fn object_center(&self, scene: &Scene) -> (f64, f64) {
        scene.object_center(self.object)
    }

    fn nearest_object_distance(&self, scene: &Scene) -> f64 {
        self.object_cells(scene)
            .map(|(r, c)| {
                let dx = c as f64 - self.agent.x;
                let dy = r as f64 - self.agent.y;
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn observe(state: &WorldState, scene: &Scene) -> Result<Observation, SimError> {
    Ok(Observation {
        image: render(state, scene)?,
        proprio: state.agent,
        timestep: state.step,
    })
}

/// Draws background, fixtures, the object, then the agent cell.
pub fn render(state: &WorldState, scene: &Scene) -> Result<LabelGridImage, SimError> {
    let n = scene.grid;
    let mut img = LabelGridImage::filled(n, n, scene.background);
    for &(r, c, l) in &scene.fixtures {
        img.set(r, c, l);
    }
    for (r, c) in state.object_cells(scene) {
        if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
            return Err(SimError::OutOfBounds(format!(
                "{} cell ({r}, {c}) at step {}",
                scene.object.name, state.step
            )));
        }
        img.set(r as usize, c as usize, scene.object.label);
    }
    let ar = state.agent.y.round() as usize;
    let ac = state.agent.x.round() as usize;
    img.set(ar.min(n - 1), ac.min(n - 1), scene.agent_label);
    Ok(img)
}

/// Advances one step. Actions are clamped to bounds; the agent is stopped at
/// the workspace edge, including when an attached object would leave it.
pub fn step(state: &WorldState, action: Action, scene: &Scene) -> WorldState {
    let a = action.clamped();
    let max = (scene.grid - 1) as f64;
    let mut next = state.clone();
    next.step += 1;

    let mut x = (state.agent.x + a.dx).clamp(0.0, max);
    let mut y = (state.agent.y + a.dy).clamp(0.0, max);
    if state.attached {
        // Keep the carried object inside the grid.
        let (w, h) = (scene.object.width as f64, scene.object.height as f64);
        let ox_lo = -state.offset.0;
        let ox_hi = max - (w - 1.0) - state.offset.0;
        let oy_lo = -state.offset.1;
        let oy_hi = max - (h - 1.0) - state.offset.1;
        x = x.clamp(ox_lo.max(0.0), ox_hi.min(max));
        y = y.clamp(oy_lo.max(0.0), oy_hi.min(max));
    }
    // The gripper is a latch: a command that carries it past the midpoint
    // closes or opens it fully.
    let gripper = if state.agent.gripper + a.dgripper >= 0.5 {
        1.0
    } else {
        0.0
    };
    next.agent = Proprioception::new(x, y, gripper);
    if state.attached {
        next.object = (x + state.offset.0, y + state.offset.1);
    }

    let closing = state.agent.gripper < 0.5 && gripper >= 0.5;
    let opening = state.agent.gripper >= 0.5 && gripper < 0.5;
    if closing
        && !state.attached
        && scene.object.graspable
        && next.nearest_object_distance(scene) <= GRASP_RADIUS
    {
        next.attached = true;
        next.offset = (next.object.0 - x, next.object.1 - y);
        if next.grasp.is_none() {
            let (_, cy) = next.object_center(scene);
            let side = if y < cy {
                Some(GraspSide::Above)
            } else if y > cy {
                Some(GraspSide::Below)
            } else {
                None
            };
            next.grasp = Some(GraspEvent {
                step: next.step,
                side,
            });
        }
    } else if opening && state.attached {
        next.attached = false;
    }
    next
}

/// Subgoal outcomes for a finished (or truncated) episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Place-in-cup: [grasped, correct side, in cup]. Sweep-sort: [engaged,
    /// correct side].
    pub subgoals: Vec<bool>,
    pub success: bool,
    pub object_center: (f64, f64),
}

pub fn evaluate(state: &WorldState, scene: &Scene) -> Outcome {
    let grasped = state.grasp.is_some();
    let side_ok = state
        .grasp
        .is_some_and(|g| g.side == Some(scene.ground_truth().grasp_side()));
    let center = state.object_center(scene);
    match scene.task {
        Task::PlaceInCup => {
            let cup = scene.cup.as_ref().expect("place-in-cup has a cup");
            let inside = !state.attached && cup.outline.interior().contains(center.0, center.1);
            let c = side_ok && inside;
            Outcome {
                subgoals: vec![grasped, side_ok, c],
                success: c,
                object_center: center,
            }
        }
        Task::SweepSort => {
            let goals = scene.sweep.expect("sweep-sort has goals");
            let in_band = match scene.ground_truth() {
                Behavior::SweepUp => center.1 < goals.up_limit,
                _ => center.1 > goals.down_limit,
            };
            Outcome {
                subgoals: vec![grasped, side_ok],
                success: in_band,
                object_center: center,
            }
        }
    }
}

/// One mask per distinct non-background label present in `image`.
pub fn ground_truth_segment(image: &LabelGridImage, background: LabelId) -> Vec<SegmentMask> {
    let mut masks: Vec<SegmentMask> = Vec::new();
    for label in image.labels() {
        if label == background {
            continue;
        }
        let cells: Vec<(usize, usize)> = (0..image.height())
            .flat_map(|r| (0..image.width()).map(move |c| (r, c)))
            .filter(|&(r, c)| image.get(r, c) == label)
            .collect();
        masks.push(SegmentMask::new(label, cells).expect("label is present"));
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::Task;

    fn place_scene(object: &str, center: i32) -> Scene {
        let cfg = TaskConfig::builtin(Task::PlaceInCup);
        let sc = cfg
            .scenarios
            .iter()
            .find(|s| s.object(object).is_some())
            .unwrap()
            .clone();
        Scene::new(&cfg, &sc, object, center).unwrap()
    }

    #[test]
    fn zero_action_only_advances_step() {
        let scene = place_scene("pen", 12);
        let s0 = scene.initial_state();
        let s1 = step(&s0, Action::ZERO, &scene);
        assert_eq!(s1.step, 1);
        assert_eq!(s1.agent, s0.agent);
        assert_eq!(s1.object, s0.object);
        assert_eq!(s1.attached, s0.attached);
    }

    #[test]
    fn unit_move_right() {
        let scene = place_scene("pen", 12);
        let mut s = scene.initial_state();
        s.agent.x = 5.0;
        s.agent.y = 5.0;
        let s1 = step(&s, Action::new(1.0, 0.0, 0.0), &scene);
        assert_eq!((s1.agent.x, s1.agent.y), (6.0, 5.0));
    }

    #[test]
    fn actions_are_clamped() {
        let scene = place_scene("pen", 12);
        let mut s = scene.initial_state();
        s.agent.x = 5.0;
        let s1 = step(&s, Action::new(7.0, -3.0, 9.0), &scene);
        assert_eq!(s1.agent.x, 6.0);
        assert_eq!(s1.agent.y, s.agent.y - 1.0);
        assert_eq!(s1.agent.gripper, 1.0);
    }

    #[test]
    fn grasp_attaches_and_carries() {
        let scene = place_scene("pen", 12);
        // Pen occupies rows 20-21, columns 8-15.
        let mut s = scene.initial_state();
        s.agent = Proprioception::new(12.0, 23.0, 0.0);
        s = step(&s, Action::new(0.0, 0.0, 1.0), &scene);
        assert!(s.attached);
        assert_eq!(s.grasp.unwrap().side, Some(GraspSide::Below));
        let before = s.object;
        s = step(&s, Action::new(0.0, -1.0, 0.0), &scene);
        assert_eq!(s.object, (before.0, before.1 - 1.0));
        s = step(&s, Action::new(0.0, 0.0, -1.0), &scene);
        assert!(!s.attached);
        let rest = s.object;
        s = step(&s, Action::new(1.0, 0.0, 0.0), &scene);
        assert_eq!(s.object, rest);
    }

    #[test]
    fn grasp_out_of_reach_does_nothing() {
        let scene = place_scene("pen", 12);
        let mut s = scene.initial_state();
        s.agent = Proprioception::new(12.0, 24.0, 0.0);
        s = step(&s, Action::new(0.0, 0.0, 1.0), &scene);
        assert!(!s.attached);
        assert!(s.grasp.is_none());
    }

    #[test]
    fn render_counts_object_cells() {
        let scene = place_scene("pen", 12);
        let s = scene.initial_state();
        let img = render(&s, &scene).unwrap();
        assert_eq!(img.count(scene.object.label), 16);
        assert_eq!(img.count(scene.agent_label), 1);
        assert_eq!(render(&s, &scene).unwrap(), img);
    }

    #[test]
    fn segmentation_partitions_non_background() {
        let scene = place_scene("pen", 12);
        let img = render(&scene.initial_state(), &scene).unwrap();
        let masks = ground_truth_segment(&img, scene.background);
        let total: usize = masks.iter().map(|m| m.len()).sum();
        let non_bg = img
            .cells()
            .iter()
            .filter(|&&c| c != scene.background)
            .count();
        assert_eq!(total, non_bg);
        for (i, a) in masks.iter().enumerate() {
            for b in &masks[i + 1..] {
                assert_eq!(a.intersection(b), 0);
            }
        }
    }
}
