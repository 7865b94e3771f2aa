//! The oracle's decomposition logic.
//!
//! The oracle plans only around constraints it has been told about through
//! reflections. Without them it produces the naive plan that walks straight
//! into the task's blindspot; once every constraint the task hinges on is
//! known it returns the pinned reference decomposition.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bench::tasks::{self, Activation, Blindspot, TaskSpec};
use crate::ids::{FixtureId, ObjectId, RobotId, SubtaskId};
use crate::perception::{EntryKind, ItemRegistry, LastSeen, Observation};
use crate::plan::{Plan, Provenance, Subtask};
use crate::world::{
    Door, Dynamics, FixtureKind, FixtureState, Location, ObjectState, Power, Primitive, RobotState, WorldState,
};

use super::Reflection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeItem {
    /// Doors must be opened before placing into the fixture.
    Door,
    /// Opening a door needs a free gripper.
    Gripper,
    /// Food going into a sink or onto a stove needs a bowl or pan there first.
    Container,
}

/// Constraints learned from reflection texts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knowledge(pub BTreeSet<KnowledgeItem>);

impl Knowledge {
    pub fn from_reflections<'a>(reflections: impl IntoIterator<Item = &'a Reflection>) -> Self {
        Self::from_texts(reflections.into_iter().map(|r| r.cause.as_str()))
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut known = BTreeSet::new();
        for text in texts {
            let lower = text.to_lowercase();
            let words: BTreeSet<&str> =
                lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
            let any = |ws: &[&str]| ws.iter().any(|w| words.contains(w));
            if any(&["gripper", "hand", "hands"]) {
                known.insert(KnowledgeItem::Gripper);
            } else if any(&["door", "doors"]) && any(&["open", "opened", "opening"]) {
                known.insert(KnowledgeItem::Door);
            }
            if any(&["container", "bowl", "pan", "vessel"]) {
                known.insert(KnowledgeItem::Container);
            }
        }
        Knowledge(known)
    }

    pub fn knows(&self, item: KnowledgeItem) -> bool {
        self.0.contains(&item)
    }

    /// Whether the task's hidden constraint has been learned.
    pub fn covers(&self, blindspot: Blindspot) -> bool {
        match blindspot {
            Blindspot::DoorClosed => self.knows(KnowledgeItem::Door),
            Blindspot::MissingContainer => self.knows(KnowledgeItem::Container),
        }
    }
}

/// Reconstructs a world from what the team has seen. Unknown fixtures and
/// objects are simply absent.
pub fn belief_from(registry: &ItemRegistry, observation: Option<&Observation>) -> WorldState {
    let mut fixtures = BTreeMap::new();
    let mut objects = BTreeMap::new();
    for (id, e) in &registry.entries {
        match (&e.kind, &e.state) {
            (EntryKind::Fixture, LastSeen::Fixture { door, powered, water_running }) => {
                if let Some(kind) = FixtureKind::parse(&e.category) {
                    fixtures.insert(
                        FixtureId::new(id.as_str()),
                        FixtureState { kind, door: *door, powered: *powered, water_running: *water_running },
                    );
                }
            }
            (EntryKind::Object, LastSeen::Object { location, thermal, wet, receptacle }) => {
                objects.insert(
                    ObjectId::new(id.as_str()),
                    ObjectState {
                        category: e.category.clone(),
                        receptacle: *receptacle,
                        location: location.clone(),
                        thermal: *thermal,
                        wet: *wet,
                    },
                );
            }
            _ => {}
        }
    }

    let mut robots = BTreeMap::new();
    if let Some(obs) = observation {
        for f in &obs.visible_fixtures {
            fixtures.insert(
                f.id.clone(),
                FixtureState { kind: f.kind, door: f.door, powered: f.powered, water_running: f.water_running },
            );
        }
        for o in &obs.visible_objects {
            objects.insert(
                o.id.clone(),
                ObjectState {
                    category: o.category.clone(),
                    receptacle: o.receptacle,
                    location: o.containment.clone(),
                    thermal: o.thermal,
                    wet: o.wet,
                },
            );
        }
        for r in &obs.team {
            for station in [&r.station, &r.home] {
                fixtures.entry(station.clone()).or_insert(FixtureState {
                    kind: FixtureKind::Dock,
                    door: Door::Absent,
                    powered: Power::Absent,
                    water_running: false,
                });
            }
            robots.insert(
                r.id.clone(),
                RobotState { id: r.id.clone(), at: r.station.clone(), holding: r.holding.clone(), home: r.home.clone() },
            );
        }
    }

    // Repair stale containment: grippers per the roster, missing parents
    // fall back to the station the object was last seen from.
    let station_of: BTreeMap<ObjectId, FixtureId> = registry
        .entries
        .iter()
        .map(|(id, e)| (ObjectId::new(id.as_str()), e.station.clone()))
        .collect();
    let held: BTreeMap<ObjectId, RobotId> = robots
        .values()
        .filter_map(|r: &RobotState| r.holding.clone().map(|o| (o, r.id.clone())))
        .collect();
    let ids: Vec<ObjectId> = objects.keys().cloned().collect();
    for id in ids {
        let fallback = station_of.get(&id).cloned();
        let o = objects.get(&id).expect("listed");
        let stale = match &o.location {
            Location::Gripper(r) => held.get(&id) != Some(r),
            Location::Object(parent) => !objects.contains_key(parent),
            Location::Fixture(f) | Location::Floor(f) => !fixtures.contains_key(f),
        };
        if let Some(r) = held.get(&id) {
            objects.get_mut(&id).expect("listed").location = Location::Gripper(r.clone());
        } else if stale {
            match fallback {
                Some(f) => objects.get_mut(&id).expect("listed").location = Location::Fixture(f),
                None => {
                    objects.remove(&id);
                }
            }
        }
    }

    WorldState { fixtures, objects, robots, clock: 0.0, dynamics: Dynamics::default() }
}

/// Step-by-step plan construction over a belief state.
struct Builder<'a> {
    belief: WorldState,
    registry: &'a ItemRegistry,
    known: &'a Knowledge,
    actor: RobotId,
    steps: Vec<Primitive>,
}

impl Builder<'_> {
    fn emit(&mut self, p: Primitive) {
        self.belief.force_effects(&p);
        self.steps.push(p);
    }

    fn at(&self) -> &FixtureId {
        &self.belief.robots[&self.actor].at
    }

    fn holding(&self) -> Option<ObjectId> {
        self.belief.robots[&self.actor].holding.clone()
    }

    fn goto(&mut self, target: &FixtureId) {
        if self.at() == target {
            return;
        }
        if let Some(other) = self.belief.occupant(target).cloned() {
            if other != self.actor {
                let home = self.belief.robots[&other].home.clone();
                self.emit(Primitive::Navigate { robot: other, fixture: home });
            }
        }
        self.emit(Primitive::Navigate { robot: self.actor.clone(), fixture: target.clone() });
    }

    /// Somewhere plain to set an object down: where it came from if that is
    /// a surface, otherwise the first known free surface.
    fn put_down_spot(&self, object: &ObjectId) -> Option<FixtureId> {
        let is_surface = |f: &FixtureId| self.belief.fixtures.get(f).is_some_and(|x| x.kind.is_surface());
        if let Some(origin) = self.registry.entries.get(object.as_str()).map(|e| &e.origin) {
            if is_surface(origin) {
                return Some(origin.clone());
            }
        }
        if is_surface(self.at()) {
            return Some(self.at().clone());
        }
        self.belief.fixtures.iter().find(|(_, f)| f.kind.is_surface()).map(|(id, _)| id.clone())
    }

    fn put_down(&mut self) {
        let Some(held) = self.holding() else { return };
        if let Some(spot) = self.put_down_spot(&held) {
            self.goto(&spot);
            self.emit(Primitive::Place { robot: self.actor.clone(), object: held, fixture: spot });
        }
    }

    fn ensure_holding(&mut self, object: &ObjectId) {
        if self.holding().as_ref() == Some(object) {
            return;
        }
        if self.holding().is_some() {
            self.put_down();
        }
        if let Some(station) = self.belief.station_of(object).cloned() {
            self.goto(&station);
            self.emit(Primitive::Pick { robot: self.actor.clone(), object: object.clone() });
        }
    }

    fn open_door(&mut self, fixture: &FixtureId) {
        if self.holding().is_some() && self.known.knows(KnowledgeItem::Gripper) {
            self.put_down();
        }
        self.goto(fixture);
        self.emit(Primitive::Open { robot: self.actor.clone(), fixture: fixture.clone() });
    }
}

pub(crate) struct Roles {
    pub item: ObjectId,
    pub destination: FixtureId,
    pub container: Option<ObjectId>,
}

pub(crate) fn roles_in(task: &TaskSpec, belief: &WorldState) -> Option<Roles> {
    let vocab = crate::perception::Vocabulary::bundled();
    let item = belief
        .objects
        .iter()
        .find(|(_, o)| !o.receptacle && task.item_matches(&o.category))
        .map(|(id, _)| id.clone())?;
    let destination =
        belief.fixtures.iter().find(|(_, f)| f.kind == task.destination).map(|(id, _)| id.clone())?;
    let container = task.container_class.as_ref().and_then(|class| {
        belief
            .objects
            .iter()
            .find(|(_, o)| o.receptacle && vocab.matches(class, &o.category))
            .map(|(id, _)| id.clone())
    });
    Some(Roles { item, destination, container })
}

fn in_destination(belief: &WorldState, roles: &Roles, needs_container: bool) -> bool {
    if belief.root_fixture(&roles.item) != Some(&roles.destination) {
        return false;
    }
    if !needs_container {
        return true;
    }
    matches!(&belief.objects[&roles.item].location, Location::Object(p)
        if belief.objects.get(p).is_some_and(|x| x.receptacle))
}

/// Plans from the current belief for one acting robot, honoring only the
/// known constraints.
pub(crate) fn generate(
    task: &TaskSpec,
    belief: WorldState,
    registry: &ItemRegistry,
    known: &Knowledge,
    actor: RobotId,
) -> Option<Vec<Primitive>> {
    let roles = roles_in(task, &belief)?;
    belief.robots.get(&actor)?;
    let needs_container =
        task.container_class.is_some() && belief.fixtures[&roles.destination].kind.requires_receptacle();
    let mut b = Builder { belief, registry, known, actor, steps: Vec::new() };
    let dest = roles.destination.clone();

    if known.knows(KnowledgeItem::Container) && needs_container {
        if let Some(c) = &roles.container {
            if b.belief.root_fixture(c) != Some(&dest) {
                b.ensure_holding(c);
                b.goto(&dest);
                b.emit(Primitive::Place { robot: b.actor.clone(), object: c.clone(), fixture: dest.clone() });
            }
        }
    }

    let item = roles.item.clone();
    if !in_destination(&b.belief, &roles, needs_container) {
        let door_closed = b.belief.fixtures[&dest].door == Door::Closed;
        if door_closed && known.knows(KnowledgeItem::Door) {
            b.open_door(&dest);
        }
        b.ensure_holding(&item);
        b.goto(&dest);
        let actor = b.actor.clone();
        match task.activation {
            Activation::PlaceAndStart => {
                b.emit(Primitive::PlaceAndStart { robot: actor, object: item.clone(), fixture: dest.clone() })
            }
            Activation::TurnOn => {
                b.emit(Primitive::Place { robot: actor.clone(), object: item.clone(), fixture: dest.clone() });
                b.emit(Primitive::TurnOn { robot: actor, fixture: dest.clone() });
            }
            Activation::None => b.emit(Primitive::Place { robot: actor, object: item.clone(), fixture: dest.clone() }),
        }
    } else if task.activation != Activation::None && b.belief.fixtures[&dest].powered != Power::On {
        // Already in place, just not running.
        if b.holding().is_some() {
            b.put_down();
        }
        b.goto(&dest);
        if b.belief.fixtures[&dest].door == Door::Open {
            b.emit(Primitive::Close { robot: b.actor.clone(), fixture: dest.clone() });
        }
        b.emit(Primitive::TurnOn { robot: b.actor.clone(), fixture: dest.clone() });
    }

    Some(b.steps)
}

/// Turns a primitive sequence into a fully sequential plan.
pub(crate) fn chain(belief: &WorldState, steps: &[Primitive], start: usize) -> Vec<Subtask> {
    let mut scratch = belief.clone();
    let mut out: Vec<Subtask> = Vec::with_capacity(steps.len());
    for (i, p) in steps.iter().enumerate() {
        let contained = tasks::contained_placement(&scratch, p);
        let mut s = Subtask::from_primitive(SubtaskId::new(format!("t{}", start + i)), p, contained);
        if let Some(prev) = out.last() {
            s.deps.insert(prev.id.clone());
        }
        scratch.force_effects(p);
        out.push(s);
    }
    out
}

pub(crate) struct DecomposeInput<'a> {
    pub task: &'a TaskSpec,
    pub registry: &'a ItemRegistry,
    pub observation: Option<&'a Observation>,
    pub reflections: &'a [Reflection],
    pub robot_count: usize,
    pub replan_from: Option<&'a SubtaskId>,
    pub previous_plan: Option<&'a Plan>,
    pub iteration: u32,
}

pub(crate) fn decompose(input: DecomposeInput<'_>) -> Option<Plan> {
    let known = Knowledge::from_reflections(input.reflections);
    let belief = belief_from(input.registry, input.observation);
    let iteration = input.iteration.max(1);

    if input.replan_from.is_none() && known.covers(input.task.blindspot) {
        if let Some(mut plan) = tasks::canonical_plan(input.task, &belief, input.robot_count) {
            plan.iteration = iteration;
            plan.provenance = Provenance { backend: "oracle".to_owned(), transcript_ref: None };
            return Some(plan);
        }
    }

    let roles = roles_in(input.task, &belief)?;
    let actor = match input.replan_from {
        None => belief.robots.keys().next()?.clone(),
        Some(failed) => {
            let needed = match &roles.container {
                Some(c)
                    if known.knows(KnowledgeItem::Container)
                        && belief.root_fixture(c) != Some(&roles.destination) =>
                {
                    c.clone()
                }
                _ => roles.item.clone(),
            };
            match belief.holder(&needed) {
                Some(r) => r.clone(),
                None => input
                    .previous_plan
                    .and_then(|p| p.get(failed))
                    .map(|s| s.robot.clone())
                    .or_else(|| input.observation.map(|o| o.robot.clone()))?,
            }
        }
    };
    let steps = generate(input.task, belief.clone(), input.registry, &known, actor)?;
    let start = input.previous_plan.map_or(1, Plan::next_index);
    let mut plan = Plan::new(iteration, chain(&belief, &steps, start));
    plan.provenance = Provenance { backend: "oracle".to_owned(), transcript_ref: None };
    Some(plan)
}
