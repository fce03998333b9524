//! Task configuration files (`scenarios/<task>.cfg`, TOML).
//!
//! Schema:
//!
//! ```toml
//! task = "place-in-cup"          # or "sweep-sort"
//! horizon = 120                  # episode length in steps
//! grid = 32                      # square grid side
//! labels = ["table", "gripper"]  # dataset label registry, id = position
//! background = "table"           # training background label
//! agent = "gripper"              # label drawn at the agent cell
//! agent_start = [1.0, 20.0]      # (x, y)
//! object_center_row = 20.5       # objects are centered vertically on this row
//! placement = [8, 23]            # inclusive range of object center columns
//!
//! [cup]                          # place-in-cup only: outlined fixture
//! label = "cup"
//! left = 22
//! top = 3
//! width = 9
//! height = 9
//!
//! [sweep]                        # sweep-sort only: goal bands on object center y
//! up_limit = 6.0
//! down_limit = 25.0
//! up_target = 3.0
//! down_target = 28.0
//!
//! [objects.pen]
//! size = [8, 2]                  # width, height
//! appearance = "stick"           # generic visual class
//! drop_mode = "front"            # place-in-cup: top | front
//! # sort_direction = "up"        # sweep-sort: up | down
//!
//! [[scenarios]]
//! id = "place-id-pen"
//! ood = "none"                   # none | background | object
//! background = "table"
//! objects = ["pen"]
//! script = { pen = ["match pen with pen"] }
//! ```
//!
//! Labels that are not in `labels` are deployment-only: they get ids after the
//! reserved UNKNOWN id, in order of first appearance (objects sorted by name,
//! then scenario backgrounds).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::model::{LabelId, LabelRegistry};

pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SweepSort,
    PlaceInCup,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::SweepSort, Task::PlaceInCup];

    pub fn name(self) -> &'static str {
        match self {
            Task::SweepSort => "sweep-sort",
            Task::PlaceInCup => "place-in-cup",
        }
    }

    pub fn default_demos_per_mode(self) -> usize {
        match self {
            Task::SweepSort => 50,
            Task::PlaceInCup => 100,
        }
    }

    pub fn subgoal_names(self) -> &'static [&'static str] {
        match self {
            Task::SweepSort => &["A", "B"],
            Task::PlaceInCup => &["A", "B", "C"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sweep-sort" | "sweep" => Ok(Task::SweepSort),
            "place-in-cup" | "place" => Ok(Task::PlaceInCup),
            other => Err(format!(
                "unknown task {other:?} (expected sweep-sort or place-in-cup)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodKind {
    None,
    Background,
    Object,
}

impl OodKind {
    pub fn name(self) -> &'static str {
        match self {
            OodKind::None => "none",
            OodKind::Background => "background",
            OodKind::Object => "object",
        }
    }
}

/// Which side of the object the agent must grasp from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraspSide {
    Above,
    Below,
}

/// The behavior mode an object calls for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    SweepUp,
    SweepDown,
    DropTop,
    DropFront,
}

impl Behavior {
    pub fn label(self) -> &'static str {
        match self {
            Behavior::SweepUp => "sweep-up",
            Behavior::SweepDown => "sweep-down",
            Behavior::DropTop => "drop-top",
            Behavior::DropFront => "drop-front",
        }
    }

    /// Pushing an object up means engaging it from below; dropping it in from
    /// the top means holding it from above.
    pub fn grasp_side(self) -> GraspSide {
        match self {
            Behavior::SweepUp | Behavior::DropFront => GraspSide::Below,
            Behavior::SweepDown | Behavior::DropTop => GraspSide::Above,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub name: String,
    pub label: LabelId,
    pub width: usize,
    pub height: usize,
    pub appearance: String,
    pub behavior: Behavior,
    pub graspable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub width: i32,
    pub height: i32,
}

impl Rect {
    pub fn right(&self) -> i32 {
        self.left + self.width - 1
    }

    pub fn bottom(&self) -> i32 {
        self.top + self.height - 1
    }

    /// Interior of an outlined rectangle.
    pub fn interior(&self) -> Rect {
        Rect {
            left: self.left + 1,
            top: self.top + 1,
            width: self.width - 2,
            height: self.height - 2,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left as f64
            && x <= self.right() as f64
            && y >= self.top as f64
            && y <= self.bottom() as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.left as f64 + (self.width - 1) as f64 / 2.0,
            self.top as f64 + (self.height - 1) as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cup {
    pub label: LabelId,
    pub outline: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SweepGoals {
    pub up_limit: f64,
    pub down_limit: f64,
    pub up_target: f64,
    pub down_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub task: Task,
    pub ood_kind: OodKind,
    pub background: LabelId,
    pub background_name: String,
    pub objects: Vec<ObjectSpec>,
    /// Inclusive range of object center columns.
    pub placement: (i32, i32),
}

impl Scenario {
    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Correct behavior for the named object in this scenario.
    pub fn ground_truth(&self, object: &str) -> Option<Behavior> {
        self.object(object).map(|o| o.behavior)
    }
}

/// A fully resolved task configuration.
#[derive(Debug, Clone)]
pub struct TaskConfig {
    pub task: Task,
    pub horizon: u32,
    pub grid: usize,
    /// Dataset labels, then UNKNOWN, then deployment-only labels.
    pub registry: LabelRegistry,
    pub dataset_labels: usize,
    pub background: LabelId,
    pub agent: LabelId,
    pub agent_start: (f64, f64),
    pub object_center_row: f64,
    pub placement: (i32, i32),
    pub cup: Option<Cup>,
    pub sweep: Option<SweepGoals>,
    pub objects: Vec<ObjectSpec>,
    pub scenarios: Vec<Scenario>,
    pub scripts: BTreeMap<(String, String), Vec<String>>,
    pub source_hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    task: Task,
    horizon: u32,
    grid: usize,
    labels: Vec<String>,
    background: String,
    agent: String,
    agent_start: [f64; 2],
    object_center_row: f64,
    placement: [i32; 2],
    cup: Option<CupEntry>,
    sweep: Option<SweepGoals>,
    objects: BTreeMap<String, ObjectEntry>,
    scenarios: Vec<ScenarioEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CupEntry {
    label: String,
    left: i32,
    top: i32,
    width: i32,
    height: i32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    size: [usize; 2],
    appearance: String,
    drop_mode: Option<String>,
    sort_direction: Option<String>,
    #[serde(default = "yes")]
    graspable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    id: String,
    ood: OodKind,
    background: String,
    objects: Vec<String>,
    #[serde(default)]
    script: BTreeMap<String, Vec<String>>,
}

const SWEEP_CFG: &str = include_str!("../../../../scenarios/sweep-sort.cfg");
const PLACE_CFG: &str = include_str!("../../../../scenarios/place-in-cup.cfg");

fn invalid(message: impl Into<String>) -> SimError {
    SimError::Config(message.into())
}

impl TaskConfig {
    /// The configuration bundled with the library.
    pub fn builtin(task: Task) -> TaskConfig {
        let text = match task {
            Task::SweepSort => SWEEP_CFG,
            Task::PlaceInCup => PLACE_CFG,
        };
        Self::parse(text).expect("bundled task configuration is valid")
    }

    pub fn load(path: &Path) -> Result<TaskConfig, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            SimError::Config(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<TaskConfig, SimError> {
        let file: TaskFile = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let source_hash = hex::encode(Sha256::digest(text.as_bytes()));
        resolve(file, source_hash)
    }

    pub fn dataset_registry(&self) -> LabelRegistry {
        LabelRegistry::new(
            self.registry
                .iter()
                .take(self.dataset_labels)
                .map(|(_, n)| n.to_string()),
        )
    }

    pub fn unknown(&self) -> LabelId {
        LabelId(self.dataset_labels as u16)
    }

    pub fn scenario(&self, id: &str) -> Result<&Scenario, SimError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SimError::UnknownScenario(id.to_string()))
    }

    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Expert script for an object in a scenario; empty when none is bundled.
    pub fn script(&self, scenario: &str, object: &str) -> &[String] {
        self.scripts
            .get(&(scenario.to_string(), object.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Every (scenario, object) pair that a benchmark evaluates.
    pub fn conditions(&self) -> Vec<(&Scenario, &ObjectSpec)> {
        self.scenarios
            .iter()
            .flat_map(|s| s.objects.iter().map(move |o| (s, o)))
            .collect()
    }

    /// The ID scenarios, one per demonstrated behavior.
    pub fn id_scenarios(&self) -> Vec<&Scenario> {
        self.scenarios
            .iter()
            .filter(|s| s.ood_kind == OodKind::None)
            .collect()
    }

    /// Top row of an object of height `h` placed on the configured center row.
    pub fn object_top(&self, height: usize) -> i32 {
        (self.object_center_row - (height as f64 - 1.0) / 2.0).round() as i32
    }
}

fn resolve(file: TaskFile, source_hash: String) -> Result<TaskConfig, SimError> {
    if file.grid < 8 {
        return Err(invalid("grid must be at least 8"));
    }
    if file.horizon == 0 {
        return Err(invalid("horizon must be positive"));
    }
    if file.labels.iter().any(|l| l == UNKNOWN_LABEL) {
        return Err(invalid(format!("label name {UNKNOWN_LABEL:?} is reserved")));
    }
    let mut registry = LabelRegistry::new(file.labels.iter().cloned());
    if registry.len() != file.labels.len() {
        return Err(invalid("duplicate label names"));
    }
    let dataset_labels = registry.len();
    registry.register(UNKNOWN_LABEL);
    for name in file.objects.keys() {
        registry.register(name);
    }
    for sc in &file.scenarios {
        registry.register(&sc.background);
    }
    let known = |name: &str, what: &str| {
        file.labels
            .iter()
            .position(|l| l == name)
            .map(|i| LabelId(i as u16))
            .ok_or_else(|| invalid(format!("{what} label {name:?} is not in labels")))
    };
    let background = known(&file.background, "background")?;
    let agent = known(&file.agent, "agent")?;

    let grid = file.grid as i32;
    let (sx, sy) = (file.agent_start[0], file.agent_start[1]);
    if !(0.0..grid as f64).contains(&sx) || !(0.0..grid as f64).contains(&sy) {
        return Err(invalid("agent_start outside grid"));
    }
    let placement = (file.placement[0], file.placement[1]);
    if placement.0 > placement.1 {
        return Err(invalid("placement range is empty"));
    }

    let cup = match (&file.cup, file.task) {
        (Some(c), Task::PlaceInCup) => {
            let outline = Rect {
                left: c.left,
                top: c.top,
                width: c.width,
                height: c.height,
            };
            if outline.width < 3
                || outline.height < 3
                || outline.left < 0
                || outline.top < 0
                || outline.right() >= grid
                || outline.bottom() >= grid
            {
                return Err(invalid(
                    "cup outline must be at least 3x3 and inside the grid",
                ));
            }
            Some(Cup {
                label: known(&c.label, "cup")?,
                outline,
            })
        }
        (None, Task::PlaceInCup) => return Err(invalid("place-in-cup requires a [cup] table")),
        (Some(_), Task::SweepSort) => return Err(invalid("[cup] is only valid for place-in-cup")),
        (None, Task::SweepSort) => None,
    };
    let sweep = match (file.sweep, file.task) {
        (Some(s), Task::SweepSort) => Some(s),
        (None, Task::SweepSort) => return Err(invalid("sweep-sort requires a [sweep] table")),
        (Some(_), Task::PlaceInCup) => return Err(invalid("[sweep] is only valid for sweep-sort")),
        (None, Task::PlaceInCup) => None,
    };

    let mut objects = Vec::new();
    for (name, entry) in &file.objects {
        let [w, h] = entry.size;
        if w == 0 || h == 0 || w > file.grid || h > file.grid {
            return Err(invalid(format!(
                "object {name:?}: size does not fit the grid"
            )));
        }
        let behavior = match file.task {
            Task::PlaceInCup => match entry.drop_mode.as_deref() {
                Some("top") => Behavior::DropTop,
                Some("front") => Behavior::DropFront,
                Some(other) => {
                    return Err(invalid(format!("object {name:?}: drop_mode {other:?}")))
                }
                None => return Err(invalid(format!("object {name:?}: missing drop_mode"))),
            },
            Task::SweepSort => match entry.sort_direction.as_deref() {
                Some("up") => Behavior::SweepUp,
                Some("down") => Behavior::SweepDown,
                Some(other) => {
                    return Err(invalid(format!(
                        "object {name:?}: sort_direction {other:?}"
                    )))
                }
                None => return Err(invalid(format!("object {name:?}: missing sort_direction"))),
            },
        };
        let left_min = placement.0 - (w / 2) as i32;
        let right_max = placement.1 - (w / 2) as i32 + w as i32 - 1;
        if left_min < 0 || right_max >= grid {
            return Err(invalid(format!(
                "object {name:?}: placement range leaves the grid"
            )));
        }
        objects.push(ObjectSpec {
            name: name.clone(),
            label: registry.id(name).expect("registered above"),
            width: w,
            height: h,
            appearance: entry.appearance.clone(),
            behavior,
            graspable: entry.graspable,
        });
    }

    let mut scenarios = Vec::new();
    let mut scripts = BTreeMap::new();
    for sc in &file.scenarios {
        if scenarios.iter().any(|s: &Scenario| s.id == sc.id) {
            return Err(invalid(format!("duplicate scenario id {:?}", sc.id)));
        }
        if sc.objects.is_empty() {
            return Err(invalid(format!("scenario {:?} lists no objects", sc.id)));
        }
        let bg_known = file.labels.contains(&sc.background);
        match sc.ood {
            OodKind::Background if bg_known => {
                return Err(invalid(format!(
                    "scenario {:?}: background {:?} must be a deployment-only label",
                    sc.id, sc.background
                )))
            }
            OodKind::None | OodKind::Object if !bg_known => {
                return Err(invalid(format!(
                    "scenario {:?}: background {:?} is not a training label",
                    sc.id, sc.background
                )))
            }
            _ => {}
        }
        let mut objs = Vec::new();
        for name in &sc.objects {
            let spec = objects
                .iter()
                .find(|o: &&ObjectSpec| &o.name == name)
                .ok_or_else(|| invalid(format!("scenario {:?}: unknown object {name:?}", sc.id)))?;
            let trained = file.labels.contains(name);
            if (sc.ood == OodKind::Object) == trained {
                return Err(invalid(format!(
                    "scenario {:?}: object {name:?} does not match ood kind {}",
                    sc.id,
                    sc.ood.name()
                )));
            }
            objs.push(spec.clone());
        }
        for (object, lines) in &sc.script {
            if !sc.objects.contains(object) {
                return Err(invalid(format!(
                    "scenario {:?}: script for absent object {object:?}",
                    sc.id
                )));
            }
            scripts.insert((sc.id.clone(), object.clone()), lines.clone());
        }
        scenarios.push(Scenario {
            id: sc.id.clone(),
            task: file.task,
            ood_kind: sc.ood,
            background: registry.id(&sc.background).expect("registered above"),
            background_name: sc.background.clone(),
            objects: objs,
            placement,
        });
    }
    let id_behaviors: Vec<Behavior> = scenarios
        .iter()
        .filter(|s| s.ood_kind == OodKind::None)
        .flat_map(|s| s.objects.iter().map(|o| o.behavior))
        .collect();
    if id_behaviors.is_empty() {
        return Err(invalid("at least one ID scenario is required"));
    }

    Ok(TaskConfig {
        task: file.task,
        horizon: file.horizon,
        grid: file.grid,
        registry,
        dataset_labels,
        background,
        agent,
        agent_start: (sx, sy),
        object_center_row: file.object_center_row,
        placement,
        cup,
        sweep,
        objects,
        scenarios,
        scripts,
        source_hash,
    })
}
