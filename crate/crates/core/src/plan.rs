//! Plans as robot-assigned dependency DAGs.
//!
//! A plan is an ordered list of subtasks, each one a single primitive for a
//! single robot, plus dependency edges. Plan length is the number of greedy
//! topological layers: subtasks that run side by side on different robots
//! count once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, RobotId, SubtaskId};
use crate::predicate::Predicate;
use crate::world::{Primitive, PrimitiveKind, Scenario};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    #[default]
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: SubtaskId,
    pub verb: PrimitiveKind,
    pub args: Vec<String>,
    pub robot: RobotId,
    #[serde(default)]
    pub deps: BTreeSet<SubtaskId>,
    pub goal_predicate: Predicate,
    #[serde(default)]
    pub status: SubtaskStatus,
}

impl Subtask {
    pub fn from_primitive(id: impl Into<SubtaskId>, p: &Primitive, contained: bool) -> Self {
        Subtask {
            id: id.into(),
            verb: p.kind(),
            args: p.args(),
            robot: p.robot().clone(),
            deps: BTreeSet::new(),
            goal_predicate: Predicate::achieved_by(p, contained),
            status: SubtaskStatus::Pending,
        }
    }

    pub fn with_deps<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<SubtaskId>,
    {
        self.deps = deps.into_iter().map(Into::into).collect();
        self
    }

    /// The primitive this subtask runs, if its arguments are well formed.
    pub fn primitive(&self) -> Option<Primitive> {
        Primitive::from_parts(self.verb, self.robot.clone(), &self.args)
    }

    pub fn is_done(&self) -> bool {
        self.status == SubtaskStatus::Done
    }

    /// Verb and arguments without the id, the key used to de-duplicate reflections.
    pub fn signature(&self) -> String {
        format!("{}({})", self.verb.as_str(), self.args.join(", "))
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.id, self.robot, self.signature())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_ref: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub iteration: u32,
    pub subtasks: Vec<Subtask>,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { id: SubtaskId },
    UnknownDependency { subtask: SubtaskId, dep: SubtaskId },
    Cycle { subtasks: Vec<SubtaskId> },
    UnknownRobot { subtask: SubtaskId, robot: RobotId },
    UnknownReference { subtask: SubtaskId, reference: String },
    MalformedArgs { subtask: SubtaskId },
    NotSequential { robot: RobotId, earlier: SubtaskId, later: SubtaskId },
    StationConflict { layer: usize, station: FixtureId, robots: Vec<RobotId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate subtask id `{id}`"),
            Violation::UnknownDependency { subtask, dep } => write!(f, "`{subtask}` depends on unknown `{dep}`"),
            Violation::Cycle { subtasks } => write!(f, "dependency cycle through {subtasks:?}"),
            Violation::UnknownRobot { subtask, robot } => write!(f, "`{subtask}` assigned to unknown robot `{robot}`"),
            Violation::UnknownReference { subtask, reference } => {
                write!(f, "`{subtask}` references unknown `{reference}`")
            }
            Violation::MalformedArgs { subtask } => write!(f, "`{subtask}` has malformed arguments"),
            Violation::NotSequential { robot, earlier, later } => {
                write!(f, "robot `{robot}`: `{later}` does not follow `{earlier}`")
            }
            Violation::StationConflict { layer, station, robots } => {
                write!(f, "layer {layer}: robots {robots:?} contend for `{station}`")
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpliceError {
    #[error("subtask `{0}` is not part of the plan")]
    UnknownSubtask(SubtaskId),
    #[error("subtask `{0}` is already done")]
    AlreadyDone(SubtaskId),
    #[error("rejected splice: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Rejected(Vec<Violation>),
}

impl Plan {
    pub fn new(iteration: u32, subtasks: Vec<Subtask>) -> Self {
        Plan { iteration, subtasks, provenance: Provenance::default() }
    }

    pub fn get(&self, id: &SubtaskId) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| &s.id == id)
    }

    pub fn get_mut(&mut self, id: &SubtaskId) -> Option<&mut Subtask> {
        self.subtasks.iter_mut().find(|s| &s.id == id)
    }

    pub fn robots(&self) -> BTreeSet<&RobotId> {
        self.subtasks.iter().map(|s| &s.robot).collect()
    }

    pub fn done_count(&self) -> usize {
        self.subtasks.iter().filter(|s| s.is_done()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plans always serialize")
    }

    /// Same steps, fresh statuses.
    pub fn reset_statuses(&mut self) {
        for s in &mut self.subtasks {
            s.status = SubtaskStatus::Pending;
        }
    }

    /// Renames subtasks to `t{start}`, `t{start+1}`, ... and rewrites the
    /// dependencies that point inside the list.
    pub fn renumber(subtasks: &mut [Subtask], start: usize) {
        let mapping: BTreeMap<SubtaskId, SubtaskId> = subtasks
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), SubtaskId::new(format!("t{}", start + i))))
            .collect();
        for s in subtasks.iter_mut() {
            s.id = mapping[&s.id].clone();
            s.deps = s.deps.iter().map(|d| mapping.get(d).cloned().unwrap_or_else(|| d.clone())).collect();
        }
    }

    /// One past the largest numeric suffix among `t<n>` ids.
    pub fn next_index(&self) -> usize {
        self.subtasks
            .iter()
            .filter_map(|s| s.id.as_str().strip_prefix('t').and_then(|n| n.parse::<usize>().ok()))
            .max()
            .map_or(1, |n| n + 1)
    }
}

/// Everything wrong with a plan with respect to a scenario. Empty means valid.
pub fn validate(plan: &Plan, scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for s in &plan.subtasks {
        if !ids.insert(&s.id) {
            out.push(Violation::DuplicateId { id: s.id.clone() });
        }
    }
    for s in &plan.subtasks {
        for d in &s.deps {
            if !ids.contains(d) {
                out.push(Violation::UnknownDependency { subtask: s.id.clone(), dep: d.clone() });
            }
        }
        if !scenario.robots.iter().any(|r| r.id == s.robot) {
            out.push(Violation::UnknownRobot { subtask: s.id.clone(), robot: s.robot.clone() });
        }
        match s.primitive() {
            None => out.push(Violation::MalformedArgs { subtask: s.id.clone() }),
            Some(p) => {
                if let Some(f) = p.fixture() {
                    if scenario.fixture(f.as_str()).is_none() {
                        out.push(Violation::UnknownReference { subtask: s.id.clone(), reference: f.to_string() });
                    }
                }
                if let Some(o) = p.object() {
                    if !scenario.objects.iter().any(|x| &x.id == o) {
                        out.push(Violation::UnknownReference { subtask: s.id.clone(), reference: o.to_string() });
                    }
                }
            }
        }
    }
    if !out.is_empty() {
        return out;
    }

    if let Some(cycle) = find_cycle(plan) {
        out.push(Violation::Cycle { subtasks: cycle });
        return out;
    }

    let index: BTreeMap<&SubtaskId, &Subtask> = plan.subtasks.iter().map(|s| (&s.id, s)).collect();
    let mut last_of: BTreeMap<&RobotId, &SubtaskId> = BTreeMap::new();
    for s in &plan.subtasks {
        if let Some(prev) = last_of.insert(&s.robot, &s.id) {
            if !reaches(&index, &s.id, prev) {
                out.push(Violation::NotSequential {
                    robot: s.robot.clone(),
                    earlier: prev.clone(),
                    later: s.id.clone(),
                });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }

    // Static station exclusion: replay robot positions layer by layer.
    let mut position: BTreeMap<RobotId, FixtureId> =
        scenario.robots.iter().map(|r| (r.id.clone(), r.home.clone())).collect();
    for (k, layer) in layers(plan).iter().enumerate() {
        let moves: BTreeMap<&RobotId, FixtureId> = layer
            .iter()
            .filter_map(|id| {
                let s = index[id];
                match s.primitive() {
                    Some(Primitive::Navigate { fixture, .. }) => Some((&s.robot, fixture)),
                    _ => None,
                }
            })
            .collect();
        let mut targets: BTreeMap<&FixtureId, Vec<RobotId>> = BTreeMap::new();
        for (r, f) in &moves {
            targets.entry(f).or_default().push((*r).clone());
        }
        for (station, mut robots) in targets {
            let stays: Vec<RobotId> = position
                .iter()
                .filter(|(r, at)| *at == station && !moves.contains_key(r) && !robots.contains(r))
                .map(|(r, _)| r.clone())
                .collect();
            robots.extend(stays);
            if robots.len() > 1 {
                robots.sort();
                out.push(Violation::StationConflict { layer: k + 1, station: station.clone(), robots });
            }
        }
        for (r, f) in moves {
            position.insert(r.clone(), f);
        }
    }
    out
}

fn reaches(index: &BTreeMap<&SubtaskId, &Subtask>, from: &SubtaskId, target: &SubtaskId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        if let Some(s) = index.get(id) {
            for d in &s.deps {
                if d == target {
                    return true;
                }
                stack.push(d);
            }
        }
    }
    false
}

fn find_cycle(plan: &Plan) -> Option<Vec<SubtaskId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Finished,
    }
    let index: BTreeMap<&SubtaskId, &Subtask> = plan.subtasks.iter().map(|s| (&s.id, s)).collect();
    let mut marks: BTreeMap<&SubtaskId, Mark> = index.keys().map(|k| (*k, Mark::Fresh)).collect();

    fn visit<'a>(
        id: &'a SubtaskId,
        index: &BTreeMap<&'a SubtaskId, &'a Subtask>,
        marks: &mut BTreeMap<&'a SubtaskId, Mark>,
        path: &mut Vec<SubtaskId>,
    ) -> Option<Vec<SubtaskId>> {
        match marks.get(id).copied() {
            Some(Mark::Finished) | None => return None,
            Some(Mark::Active) => {
                let start = path.iter().position(|p| p == id).unwrap_or(0);
                return Some(path[start..].to_vec());
            }
            Some(Mark::Fresh) => {}
        }
        marks.insert(id, Mark::Active);
        path.push(id.clone());
        for d in &index[id].deps {
            if let Some(c) = visit(d, index, marks, path) {
                return Some(c);
            }
        }
        path.pop();
        marks.insert(id, Mark::Finished);
        None
    }

    for s in &plan.subtasks {
        if let Some(c) = visit(&s.id, &index, &mut marks, &mut Vec::new()) {
            return Some(c);
        }
    }
    None
}

/// Greedy topological layering. Layer k holds every subtask whose
/// dependencies all sit in earlier layers, at most one per robot (lowest plan
/// index wins), ordered by robot id.
pub fn layers(plan: &Plan) -> Vec<Vec<SubtaskId>> {
    let mut layer_of: BTreeMap<&SubtaskId, usize> = BTreeMap::new();
    let mut remaining: Vec<&Subtask> = plan.subtasks.iter().collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let k = out.len();
        let mut robots = BTreeSet::new();
        let mut layer: Vec<&Subtask> = Vec::new();
        for s in &remaining {
            let ready = s.deps.iter().all(|d| layer_of.get(d).is_some_and(|&l| l < k));
            if ready && robots.insert(&s.robot) {
                layer.push(s);
            }
        }
        if layer.is_empty() {
            break;
        }
        for s in &layer {
            layer_of.insert(&s.id, k);
        }
        remaining.retain(|s| !layer_of.contains_key(&s.id));
        layer.sort_by(|a, b| a.robot.cmp(&b.robot));
        out.push(layer.into_iter().map(|s| s.id.clone()).collect());
    }
    out
}

/// Number of layers: parallel subtasks count once.
pub fn plan_length(plan: &Plan) -> usize {
    layers(plan).len()
}

/// Replaces the failed subtask and everything not yet done with `new_suffix`.
///
/// Done subtasks are kept verbatim. Suffix subtasks without dependencies
/// are chained after the last done subtask of every robot, so the suffix
/// never overlaps the executed prefix.
pub fn splice_replan(
    plan: &Plan,
    failed_subtask: &SubtaskId,
    new_suffix: Vec<Subtask>,
    scenario: &Scenario,
) -> Result<Plan, SpliceError> {
    let failed = plan.get(failed_subtask).ok_or_else(|| SpliceError::UnknownSubtask(failed_subtask.clone()))?;
    if failed.is_done() {
        return Err(SpliceError::AlreadyDone(failed_subtask.clone()));
    }
    let kept: Vec<Subtask> = plan.subtasks.iter().filter(|s| s.is_done()).cloned().collect();
    let mut frontier: BTreeMap<&RobotId, &SubtaskId> = BTreeMap::new();
    for s in &kept {
        frontier.insert(&s.robot, &s.id);
    }
    let frontier: BTreeSet<SubtaskId> = frontier.into_values().cloned().collect();

    let mut subtasks = kept.clone();
    for mut s in new_suffix {
        if s.deps.is_empty() {
            s.deps = frontier.clone();
        }
        s.status = SubtaskStatus::Pending;
        subtasks.push(s);
    }
    let spliced = Plan { iteration: plan.iteration, subtasks, provenance: plan.provenance.clone() };
    let violations = validate(&spliced, scenario);
    if violations.is_empty() {
        Ok(spliced)
    } else {
        Err(SpliceError::Rejected(violations))
    }
}

/// Text table with one row per layer.
pub fn render_layers(plan: &Plan) -> String {
    let index: BTreeMap<&SubtaskId, &Subtask> = plan.subtasks.iter().map(|s| (&s.id, s)).collect();
    let mut out = String::new();
    for (k, layer) in layers(plan).iter().enumerate() {
        let cells: Vec<String> = layer
            .iter()
            .map(|id| {
                let s = index[id];
                format!("{}: {}", s.robot, s.signature())
            })
            .collect();
        out.push_str(&format!("L{:<3} {}\n", k + 1, cells.join(" | ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Scenario;

    fn scenario() -> Scenario {
        serde_json::from_value(serde_json::json!({
            "layout_id": "t",
            "style_id": "s",
            "fixtures": [
                {"id": "counter", "kind": "counter"},
                {"id": "microwave", "kind": "microwave", "door": "closed", "powered": "off"},
                {"id": "sink", "kind": "sink", "powered": "off"},
                {"id": "dock_a", "kind": "dock"},
                {"id": "dock_b", "kind": "dock"}
            ],
            "objects": [{"id": "carrot", "category": "carrot", "at": "counter"}],
            "robots": [{"id": "A", "home": "dock_a"}, {"id": "B", "home": "dock_b"}]
        }))
        .unwrap()
    }

    fn st(id: &str, p: Primitive, deps: &[&str]) -> Subtask {
        Subtask::from_primitive(id, &p, false).with_deps(deps.iter().copied())
    }

    fn nav(r: &str, f: &str) -> Primitive {
        Primitive::Navigate { robot: r.into(), fixture: f.into() }
    }

    fn two_robot_microwave() -> Plan {
        Plan::new(
            1,
            vec![
                st("t1", nav("A", "counter"), &[]),
                st("t2", nav("B", "microwave"), &[]),
                st("t3", Primitive::Pick { robot: "A".into(), object: "carrot".into() }, &["t1"]),
                st("t4", Primitive::Open { robot: "B".into(), fixture: "microwave".into() }, &["t2"]),
                st("t5", nav("A", "microwave"), &["t3", "t4"]),
                st("t6", nav("B", "dock_b"), &["t4"]),
                st(
                    "t7",
                    Primitive::PlaceAndStart { robot: "A".into(), object: "carrot".into(), fixture: "microwave".into() },
                    &["t5", "t6"],
                ),
            ],
        )
    }

    #[test]
    fn two_robot_plan_validates_into_four_layers() {
        let plan = two_robot_microwave();
        assert_eq!(validate(&plan, &scenario()), vec![]);
        assert_eq!(plan_length(&plan), 4);
        assert_eq!(layers(&plan)[2], vec![SubtaskId::new("t5"), SubtaskId::new("t6")]);
    }

    #[test]
    fn cycle_is_reported() {
        let plan = Plan::new(
            1,
            vec![st("a", nav("A", "counter"), &["b"]), st("b", nav("A", "sink"), &["a"])],
        );
        let v = validate(&plan, &scenario());
        assert!(matches!(v.as_slice(), [Violation::Cycle { .. }]), "{v:?}");
    }

    #[test]
    fn both_robots_to_sink_conflict() {
        let plan = Plan::new(1, vec![st("a", nav("A", "sink"), &[]), st("b", nav("B", "sink"), &[])]);
        let v = validate(&plan, &scenario());
        assert!(matches!(v.as_slice(), [Violation::StationConflict { layer: 1, .. }]), "{v:?}");
    }

    #[test]
    fn robot_must_be_sequential() {
        let plan = Plan::new(1, vec![st("a", nav("A", "sink"), &[]), st("b", nav("A", "counter"), &[])]);
        assert!(matches!(validate(&plan, &scenario()).as_slice(), [Violation::NotSequential { .. }]));
    }

    #[test]
    fn sequential_plan_has_singleton_layers() {
        let steps = ["counter", "sink", "microwave", "counter", "sink", "dock_a"];
        let subtasks: Vec<Subtask> = steps
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let deps: Vec<String> = if i == 0 { vec![] } else { vec![format!("t{i}")] };
                st(&format!("t{}", i + 1), nav("A", f), &[]).with_deps(deps)
            })
            .collect();
        let plan = Plan::new(1, subtasks);
        assert!(validate(&plan, &scenario()).is_empty());
        assert_eq!(plan_length(&plan), 6);
        assert!(layers(&plan).iter().all(|l| l.len() == 1));
    }

    #[test]
    fn independent_subtasks_share_a_layer() {
        let plan = Plan::new(1, vec![st("a", nav("A", "sink"), &[]), st("b", nav("B", "counter"), &[])]);
        assert_eq!(layers(&plan), vec![vec![SubtaskId::new("a"), SubtaskId::new("b")]]);
    }

    #[test]
    fn empty_plan_has_zero_length() {
        assert_eq!(plan_length(&Plan::new(1, vec![])), 0);
    }

    fn flawed() -> Plan {
        let mut plan = Plan::new(
            1,
            vec![
                st("t1", nav("A", "counter"), &[]),
                st("t2", Primitive::Pick { robot: "A".into(), object: "carrot".into() }, &["t1"]),
                st("t3", nav("A", "microwave"), &["t2"]),
                st(
                    "t4",
                    Primitive::PlaceAndStart { robot: "A".into(), object: "carrot".into(), fixture: "microwave".into() },
                    &["t3"],
                ),
            ],
        );
        for s in &mut plan.subtasks[..3] {
            s.status = SubtaskStatus::Done;
        }
        plan
    }

    #[test]
    fn splice_keeps_done_prefix() {
        let plan = flawed();
        let mut suffix = vec![
            st("x", nav("A", "counter"), &[]),
            st(
                "y",
                Primitive::Place { robot: "A".into(), object: "carrot".into(), fixture: "counter".into() },
                &["x"],
            ),
        ];
        Plan::renumber(&mut suffix, plan.next_index());
        let spliced = splice_replan(&plan, &"t4".into(), suffix, &scenario()).unwrap();
        assert_eq!(&spliced.subtasks[..3], &plan.subtasks[..3]);
        assert_eq!(spliced.subtasks.len(), 5);
        assert_eq!(spliced.subtasks[3].id, SubtaskId::new("t5"));
        assert!(spliced.subtasks[3].deps.contains(&SubtaskId::new("t3")));
    }

    #[test]
    fn empty_suffix_ends_after_prefix() {
        let spliced = splice_replan(&flawed(), &"t4".into(), vec![], &scenario()).unwrap();
        assert_eq!(spliced.subtasks.len(), 3);
        assert!(spliced.subtasks.iter().all(Subtask::is_done));
    }

    #[test]
    fn splice_rejects_unknown_object() {
        let suffix = vec![st("t9", Primitive::Pick { robot: "A".into(), object: "kiwi".into() }, &[])];
        let err = splice_replan(&flawed(), &"t4".into(), suffix, &scenario()).unwrap_err();
        assert!(matches!(err, SpliceError::Rejected(_)));
    }

    #[test]
    fn splice_refuses_done_subtask() {
        let err = splice_replan(&flawed(), &"t2".into(), vec![], &scenario()).unwrap_err();
        assert_eq!(err, SpliceError::AlreadyDone("t2".into()));
    }
}
