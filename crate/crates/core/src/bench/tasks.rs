//! The four benchmark tasks: definitions, randomized scene generation and
//! the pinned reference decompositions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};
use crate::perception::Vocabulary;
use crate::plan::{Plan, Provenance, Subtask};
use crate::predicate::Predicate;
use crate::world::{
    FixtureKind, FixtureSpec, ObjectSpec, PerPrimitive, PrimitiveKind, RobotSpec, Scenario, Thermal, WorldState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskName {
    OpenCabinetPnP,
    OpenMicrowavePnP,
    DefrostInBowl,
    HeatOnStove,
}

impl TaskName {
    pub const ALL: [TaskName; 4] =
        [TaskName::OpenCabinetPnP, TaskName::OpenMicrowavePnP, TaskName::DefrostInBowl, TaskName::HeatOnStove];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::OpenCabinetPnP => "OpenCabinetPnP",
            TaskName::OpenMicrowavePnP => "OpenMicrowavePnP",
            TaskName::DefrostInBowl => "DefrostInBowl",
            TaskName::HeatOnStove => "HeatOnStove",
        }
    }

    pub fn spec(self) -> &'static TaskSpec {
        &catalog()[&self]
    }

    fn salt(self) -> u64 {
        match self {
            TaskName::OpenCabinetPnP => 0x0c4b_1e7a,
            TaskName::OpenMicrowavePnP => 0x3c20_0a7e,
            TaskName::DefrostInBowl => 0xdef2_0575,
            TaskName::HeatOnStove => 0x57_0fe0,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// What finishes the task once the item is in place.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    TurnOn,
    PlaceAndStart,
}

/// The constraint a naive decomposition overlooks for this task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blindspot {
    DoorClosed,
    MissingContainer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskName,
    pub instruction: String,
    /// Items a well-informed reasoner proposes before exploring.
    pub hypotheses: Vec<String>,
    pub item_classes: Vec<String>,
    pub item_thermal: Thermal,
    pub item_sources: Vec<FixtureKind>,
    pub destination: FixtureKind,
    pub container_class: Option<String>,
    pub container_sources: Vec<FixtureKind>,
    pub activation: Activation,
    pub goal_thermal: Option<Thermal>,
    pub blindspot: Blindspot,
    pub layouts: Vec<String>,
    pub styles: Vec<String>,
    pub distractor_classes: Vec<String>,
    pub distractor_count: [usize; 2],
}

#[derive(Clone, Debug, Deserialize)]
struct Layout {
    id: String,
    fixtures: Vec<FixtureSpec>,
}

#[derive(Clone, Debug, Deserialize)]
struct TemplateStep {
    id: String,
    robot: String,
    verb: PrimitiveKind,
    args: Vec<String>,
    deps: Vec<String>,
}

#[derive(Clone, Debug, Deserialize)]
struct CanonicalTemplates {
    task: TaskName,
    single_robot: Vec<TemplateStep>,
    two_robot: Vec<TemplateStep>,
}

fn catalog() -> &'static BTreeMap<TaskName, TaskSpec> {
    static CATALOG: OnceLock<BTreeMap<TaskName, TaskSpec>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        [
            include_str!("../../data/v1/tasks/OpenCabinetPnP.json"),
            include_str!("../../data/v1/tasks/OpenMicrowavePnP.json"),
            include_str!("../../data/v1/tasks/DefrostInBowl.json"),
            include_str!("../../data/v1/tasks/HeatOnStove.json"),
        ]
        .into_iter()
        .map(|doc| {
            let spec: TaskSpec = serde_json::from_str(doc).expect("bundled task definition");
            (spec.name, spec)
        })
        .collect()
    })
}

fn layouts() -> &'static BTreeMap<String, Layout> {
    static LAYOUTS: OnceLock<BTreeMap<String, Layout>> = OnceLock::new();
    LAYOUTS.get_or_init(|| {
        let list: Vec<Layout> =
            serde_json::from_str(include_str!("../../data/v1/layouts.json")).expect("bundled layouts");
        list.into_iter().map(|l| (l.id.clone(), l)).collect()
    })
}

fn templates() -> &'static BTreeMap<TaskName, CanonicalTemplates> {
    static TEMPLATES: OnceLock<BTreeMap<TaskName, CanonicalTemplates>> = OnceLock::new();
    TEMPLATES.get_or_init(|| {
        [
            include_str!("../../data/v1/canonical/OpenCabinetPnP.json"),
            include_str!("../../data/v1/canonical/OpenMicrowavePnP.json"),
            include_str!("../../data/v1/canonical/DefrostInBowl.json"),
            include_str!("../../data/v1/canonical/HeatOnStove.json"),
        ]
        .into_iter()
        .map(|doc| {
            let t: CanonicalTemplates = serde_json::from_str(doc).expect("bundled canonical plan");
            (t.task, t)
        })
        .collect()
    })
}

/// Looks a task up by its instruction text.
pub fn task_for_instruction(instruction: &str) -> Option<&'static TaskSpec> {
    let needle = instruction.trim().to_lowercase();
    catalog().values().find(|t| t.instruction == needle)
}

/// The concrete ids a task talks about in one particular scene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRoles {
    pub item: ObjectId,
    pub destination: FixtureId,
    pub container: Option<ObjectId>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RoleError {
    #[error("no {0} found in the scene")]
    Missing(String),
}

impl TaskSpec {
    pub fn item_matches(&self, category: &str) -> bool {
        let vocab = Vocabulary::bundled();
        self.item_classes.iter().any(|c| vocab.matches(c, category))
    }

    /// Binds the task's roles against whatever is known about the scene.
    pub fn resolve_roles(&self, world: &WorldState) -> Result<TaskRoles, RoleError> {
        let vocab = Vocabulary::bundled();
        let item = world
            .objects
            .iter()
            .find(|(_, o)| !o.receptacle && self.item_matches(&o.category))
            .map(|(id, _)| id.clone())
            .ok_or_else(|| RoleError::Missing(self.item_classes.join(" or ")))?;
        let destination = world
            .fixtures
            .iter()
            .find(|(_, f)| f.kind == self.destination)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| RoleError::Missing(self.destination.as_str().to_owned()))?;
        let container = match &self.container_class {
            None => None,
            Some(class) => Some(
                world
                    .objects
                    .iter()
                    .find(|(_, o)| o.receptacle && vocab.matches(class, &o.category))
                    .map(|(id, _)| id.clone())
                    .ok_or_else(|| RoleError::Missing(class.clone()))?,
            ),
        };
        Ok(TaskRoles { item, destination, container })
    }

    /// End-state condition for the episode.
    pub fn goal(&self, roles: &TaskRoles) -> Predicate {
        let mut of = vec![Predicate::ObjectIn {
            object: roles.item.clone(),
            fixture: roles.destination.clone(),
            contained: roles.container.is_some(),
        }];
        if let Some(t) = self.goal_thermal {
            of.push(Predicate::Thermal { object: roles.item.clone(), state: t });
        }
        Predicate::All { of }
    }
}

/// Robot ids in canonical order: `A`, `B`, `C`, ...
pub fn robot_ids(count: usize) -> Vec<RobotId> {
    (0..count).map(|i| RobotId::new(((b'A' + i as u8) as char).to_string())).collect()
}

fn dock_id(i: usize) -> FixtureId {
    FixtureId::new(format!("dock_{}", (b'a' + i as u8) as char))
}

impl Scenario {
    /// Same scene with exactly `count` robots docked at `dock_a`, `dock_b`, ...
    /// Missing docks are appended to the fixture list.
    pub fn with_robot_count(mut self, count: usize) -> Scenario {
        let count = count.max(1);
        for i in 0..count {
            let dock = dock_id(i);
            if self.fixture(dock.as_str()).is_none() {
                self.fixtures.push(FixtureSpec {
                    id: dock,
                    kind: FixtureKind::Dock,
                    door: Default::default(),
                    powered: Default::default(),
                });
            }
        }
        self.robots = robot_ids(count)
            .into_iter()
            .enumerate()
            .map(|(i, id)| RobotSpec { id, home: dock_id(i) })
            .collect();
        self
    }
}

fn object_id(category: &str) -> ObjectId {
    ObjectId::new(category.replace(' ', "_"))
}

/// Deterministically builds a randomized two-robot scene for a task.
pub fn instantiate_task(task: &TaskSpec, trial_seed: u64) -> Scenario {
    let vocab = Vocabulary::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed ^ task.name.salt());
    let layout_id = task.layouts.choose(&mut rng).expect("task has layouts");
    let layout = &layouts()[layout_id];
    let style_id = task.styles.choose(&mut rng).expect("task has styles").clone();

    let of_kind = |kinds: &[FixtureKind]| -> Vec<FixtureId> {
        layout.fixtures.iter().filter(|f| kinds.contains(&f.kind)).map(|f| f.id.clone()).collect()
    };
    let surfaces = of_kind(&[FixtureKind::Counter, FixtureKind::Island, FixtureKind::Shelf]);

    let mut objects = Vec::new();
    let item_pool: Vec<&String> = task
        .item_classes
        .iter()
        .filter_map(|c| vocab.class_members(c))
        .flatten()
        .collect();
    let item_category = (*item_pool.choose(&mut rng).expect("item class has members")).clone();
    let item_at = of_kind(&task.item_sources).choose(&mut rng).expect("layout has an item source").clone();
    objects.push(ObjectSpec {
        id: object_id(&item_category),
        category: item_category,
        receptacle: false,
        thermal: task.item_thermal,
        at: item_at,
    });

    if let Some(class) = &task.container_class {
        let category = vocab
            .class_members(class)
            .and_then(|m| m.iter().next())
            .expect("container class has members")
            .clone();
        let at = of_kind(&task.container_sources).choose(&mut rng).expect("layout has a container source").clone();
        objects.push(ObjectSpec { id: object_id(&category), category, receptacle: true, thermal: Thermal::Ambient, at });
    }

    let [lo, hi] = task.distractor_count;
    let n = rng.gen_range(lo..=hi);
    let mut pool: Vec<&String> = task
        .distractor_classes
        .iter()
        .filter_map(|c| vocab.class_members(c))
        .flatten()
        .collect();
    pool.shuffle(&mut rng);
    for category in pool.into_iter().take(n) {
        let at = surfaces.choose(&mut rng).expect("layout has surfaces").clone();
        objects.push(ObjectSpec {
            id: object_id(category),
            category: category.clone(),
            receptacle: false,
            thermal: Thermal::Ambient,
            at,
        });
    }

    Scenario {
        layout_id: layout.id.clone(),
        style_id,
        fixtures: layout.fixtures.clone(),
        objects,
        robots: Vec::new(),
        primitive_success_prob: PerPrimitive::uniform(1.0),
        duration_table: PerPrimitive::default_durations(),
        seed: trial_seed,
    }
    .with_robot_count(2)
}

/// The reference decomposition for a task in a particular scene, for one
/// robot or for two. Returns `None` when the scene lacks a required role or
/// the team is too small.
pub fn canonical_plan(task: &TaskSpec, world: &WorldState, robot_count: usize) -> Option<Plan> {
    let roles = task.resolve_roles(world).ok()?;
    let robots: Vec<&RobotId> = world.robots.keys().collect();
    let t = &templates()[&task.name];
    let steps = match robot_count {
        0 => return None,
        1 => &t.single_robot,
        _ => &t.two_robot,
    };
    let needed = if robot_count == 1 { 1 } else { 2 };
    if robots.len() < needed {
        return None;
    }

    let mut bind: BTreeMap<&str, String> = BTreeMap::new();
    bind.insert("$item", roles.item.to_string());
    bind.insert("$dest", roles.destination.to_string());
    bind.insert("$item_src", world.station_of(&roles.item)?.to_string());
    if let Some(c) = &roles.container {
        bind.insert("$container", c.to_string());
        bind.insert("$container_src", world.station_of(c)?.to_string());
    }
    bind.insert("$r1", robots[0].to_string());
    if needed > 1 {
        bind.insert("$r2", robots[1].to_string());
        bind.insert("$home2", world.robots[robots[1]].home.to_string());
    }
    let resolve = |s: &str| -> Option<String> {
        if s.starts_with('$') {
            bind.get(s).cloned()
        } else {
            Some(s.to_owned())
        }
    };

    let mut subtasks = Vec::with_capacity(steps.len());
    for step in steps {
        let args: Option<Vec<String>> = step.args.iter().map(|a| resolve(a)).collect();
        let robot = RobotId::new(resolve(&step.robot)?);
        let p = crate::world::Primitive::from_parts(step.verb, robot, &args?)?;
        let contained = contained_placement(world, &p);
        subtasks.push(Subtask::from_primitive(step.id.as_str(), &p, contained).with_deps(step.deps.iter().map(String::as_str)));
    }
    let mut plan = Plan::new(1, subtasks);
    plan.provenance = Provenance { backend: "canonical".to_owned(), transcript_ref: None };
    Some(plan)
}

/// Whether placing per this primitive should end with the object inside a receptacle.
pub fn contained_placement(world: &WorldState, p: &crate::world::Primitive) -> bool {
    match (p.object(), p.fixture()) {
        (Some(o), Some(f)) if matches!(p.kind(), PrimitiveKind::Place | PrimitiveKind::PlaceAndStart) => {
            let needs = world.fixtures.get(f).is_some_and(|x| x.kind.requires_receptacle());
            let is_vessel = world.objects.get(o).is_some_and(|x| x.receptacle);
            needs && !is_vessel
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_scenario, Door};

    #[test]
    fn catalog_has_all_tasks() {
        for t in TaskName::ALL {
            let spec = t.spec();
            assert_eq!(spec.name, t);
            assert!((6..=8).contains(&spec.layouts.len()), "{t}: layouts");
            assert!((5..=12).contains(&spec.styles.len()), "{t}: styles");
            assert_eq!(task_for_instruction(&spec.instruction).map(|s| s.name), Some(t));
        }
    }

    #[test]
    fn cabinet_starts_closed() {
        let s = instantiate_task(TaskName::OpenCabinetPnP.spec(), 7);
        let cabinet = s.fixtures.iter().find(|f| f.kind == FixtureKind::Cabinet).unwrap();
        assert_eq!(cabinet.door, Door::Closed);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn instantiation_is_deterministic() {
        for t in TaskName::ALL {
            assert_eq!(instantiate_task(t.spec(), 42), instantiate_task(t.spec(), 42));
        }
        assert_ne!(
            instantiate_task(TaskName::HeatOnStove.spec(), 1),
            instantiate_task(TaskName::HeatOnStove.spec(), 2)
        );
    }

    #[test]
    fn heat_on_stove_always_has_pan_and_stove() {
        for seed in 0..50 {
            let s = instantiate_task(TaskName::HeatOnStove.spec(), seed);
            assert!(s.objects.iter().any(|o| o.category == "pan" && o.receptacle));
            assert!(s.fixtures.iter().any(|f| f.kind == FixtureKind::Stove));
            let w = load_scenario(&s).unwrap();
            assert!(TaskName::HeatOnStove.spec().resolve_roles(&w).is_ok());
        }
    }

    #[test]
    fn robot_count_adjusts_docks() {
        let s = instantiate_task(TaskName::OpenMicrowavePnP.spec(), 3).with_robot_count(3);
        assert_eq!(s.robots.len(), 3);
        assert!(s.fixture("dock_c").is_some());
        assert!(s.validate().is_ok());
        let one = s.with_robot_count(1);
        assert_eq!(one.robot_ids(), vec![RobotId::new("A")]);
    }
}
