//! Station-local observations, the item registry built while exploring, and
//! the exploration sweep that fills it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};
use crate::world::{Door, FixtureKind, Location, Power, Primitive, Thermal, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contents {
    Visible,
    /// Behind a closed door; whatever is inside is not itemized.
    Enclosed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureView {
    pub id: FixtureId,
    pub kind: FixtureKind,
    pub door: Door,
    pub powered: Power,
    pub water_running: bool,
    pub contents: Contents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub id: ObjectId,
    pub category: String,
    pub receptacle: bool,
    pub thermal: Thermal,
    pub wet: bool,
    pub containment: Location,
}

/// Where each teammate stands and what it carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub id: RobotId,
    pub station: FixtureId,
    pub holding: Option<ObjectId>,
    pub home: FixtureId,
}

/// What one robot perceives at its current station.
///
/// Field order and element order (sorted by id) are fixed so the JSON form is
/// byte-stable; that form is what reasoners see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub robot: RobotId,
    pub station: FixtureId,
    pub visible_fixtures: Vec<FixtureView>,
    pub visible_objects: Vec<ObjectView>,
    pub holding: Option<ObjectId>,
    pub team: Vec<RobotView>,
    pub clock: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PerceptionError {
    #[error("unknown robot `{0}`")]
    UnknownRobot(RobotId),
}

pub fn observe(state: &WorldState, robot: &RobotId) -> Result<Observation, PerceptionError> {
    let me = state.robots.get(robot).ok_or_else(|| PerceptionError::UnknownRobot(robot.clone()))?;
    let station = me.at.clone();
    let visible_fixtures = state
        .fixtures
        .get(&station)
        .map(|f| FixtureView {
            id: station.clone(),
            kind: f.kind,
            door: f.door,
            powered: f.powered,
            water_running: f.water_running,
            contents: if f.door == Door::Closed && !f.kind.has_window() {
                Contents::Enclosed
            } else {
                Contents::Visible
            },
        })
        .into_iter()
        .collect();
    let visible_objects = state
        .objects
        .iter()
        .filter(|(id, _)| {
            let here = state.holder(id).is_none()
                && state.station_of(id) == Some(&station)
                && (state.accessible(id) || state.fixtures[&station].kind.has_window());
            here || state.holder(id) == Some(robot)
        })
        .map(|(id, o)| ObjectView {
            id: id.clone(),
            category: o.category.clone(),
            receptacle: o.receptacle,
            thermal: o.thermal,
            wet: o.wet,
            containment: o.location.clone(),
        })
        .collect();
    let team = state
        .robots
        .values()
        .map(|r| RobotView { id: r.id.clone(), station: r.at.clone(), holding: r.holding.clone(), home: r.home.clone() })
        .collect();
    Ok(Observation {
        robot: robot.clone(),
        station,
        visible_fixtures,
        visible_objects,
        holding: me.holding.clone(),
        team,
        clock: state.clock,
    })
}

impl Observation {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("observations always serialize")
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectView> {
        self.visible_objects.iter().find(|o| &o.id == id)
    }

    pub fn fixture(&self, id: &FixtureId) -> Option<&FixtureView> {
        self.visible_fixtures.iter().find(|f| &f.id == id)
    }

    /// Follows visible containment edges to where the chain ends.
    pub fn outermost(&self, id: &ObjectId) -> Option<&Location> {
        let mut current = self.object(id)?;
        for _ in 0..=self.visible_objects.len() {
            match &current.containment {
                Location::Object(parent) => current = self.object(parent)?,
                end => return Some(end),
            }
        }
        None
    }

    /// The fixture a visible object rests in, if any.
    pub fn root_fixture(&self, id: &ObjectId) -> Option<&FixtureId> {
        match self.outermost(id)? {
            Location::Fixture(f) => Some(f),
            _ => None,
        }
    }

    /// The station a visible object lies at, in a fixture or on the floor.
    pub fn resting_station(&self, id: &ObjectId) -> Option<&FixtureId> {
        match self.outermost(id)? {
            Location::Fixture(f) | Location::Floor(f) => Some(f),
            _ => None,
        }
    }

    pub fn teammate_at(&self, station: &FixtureId) -> Option<&RobotView> {
        self.team.iter().find(|r| &r.station == station && r.id != self.robot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Fixture,
    Object,
    /// A sub-part of a fixture that is worth naming on its own (a sink's faucet).
    Component,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LastSeen {
    Fixture { door: Door, powered: Power, water_running: bool },
    Object { location: Location, thermal: Thermal, wet: bool, receptacle: bool },
    Component,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub category: String,
    pub kind: EntryKind,
    pub station: FixtureId,
    /// Station where the item was first seen.
    pub origin: FixtureId,
    pub state: LastSeen,
    pub discovered_at: f64,
    pub last_seen_at: f64,
}

/// Everything the team has seen so far. Entries are added or refreshed, never removed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemRegistry {
    pub entries: BTreeMap<String, RegistryEntry>,
}

impl ItemRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("registry always serializes")
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn merge(&mut self, obs: &Observation) {
        for f in &obs.visible_fixtures {
            self.upsert(
                f.id.to_string(),
                f.kind.as_str().to_owned(),
                EntryKind::Fixture,
                &obs.station,
                LastSeen::Fixture { door: f.door, powered: f.powered, water_running: f.water_running },
                obs.clock,
            );
            if f.kind == FixtureKind::Sink {
                self.upsert(
                    format!("{}/faucet", f.id),
                    "faucet".to_owned(),
                    EntryKind::Component,
                    &obs.station,
                    LastSeen::Component,
                    obs.clock,
                );
            }
        }
        for o in &obs.visible_objects {
            self.upsert(
                o.id.to_string(),
                o.category.clone(),
                EntryKind::Object,
                &obs.station,
                LastSeen::Object {
                    location: o.containment.clone(),
                    thermal: o.thermal,
                    wet: o.wet,
                    receptacle: o.receptacle,
                },
                obs.clock,
            );
        }
    }

    fn upsert(&mut self, id: String, category: String, kind: EntryKind, station: &FixtureId, state: LastSeen, clock: f64) {
        match self.entries.get_mut(&id) {
            Some(entry) => {
                entry.station = station.clone();
                entry.state = state;
                entry.last_seen_at = clock;
            }
            None => {
                self.entries.insert(
                    id,
                    RegistryEntry {
                        category,
                        kind,
                        station: station.clone(),
                        origin: station.clone(),
                        state,
                        discovered_at: clock,
                        last_seen_at: clock,
                    },
                );
            }
        }
    }

    /// Ids of entries whose category matches a hypothesis.
    pub fn matching(&self, hypothesis: &str) -> Vec<&str> {
        let vocab = Vocabulary::bundled();
        self.entries
            .iter()
            .filter(|(_, e)| vocab.matches(hypothesis, &e.category))
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Category vocabulary: object classes plus natural-language aliases.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    classes: BTreeMap<String, BTreeSet<String>>,
    aliases: BTreeMap<String, Vec<String>>,
}

impl Vocabulary {
    pub fn bundled() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let classes: BTreeMap<String, Vec<String>> =
                serde_json::from_str(include_str!("../data/v1/objects.json")).expect("bundled object catalog");
            let aliases: BTreeMap<String, Vec<String>> =
                serde_json::from_str(include_str!("../data/v1/synonyms.json")).expect("bundled synonym table");
            Vocabulary {
                classes: classes.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
                aliases,
            }
        })
    }

    pub fn class_members(&self, class: &str) -> Option<&BTreeSet<String>> {
        self.classes.get(class)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.classes.iter()
    }

    /// The class a category belongs to, if any.
    pub fn class_of(&self, category: &str) -> Option<&str> {
        self.classes.iter().find(|(_, members)| members.contains(category)).map(|(c, _)| c.as_str())
    }

    /// Whether `category` satisfies `hypothesis`. Hypotheses may list
    /// alternatives joined by " or " and may use class names or aliases.
    pub fn matches(&self, hypothesis: &str, category: &str) -> bool {
        let category = normalize(category);
        hypothesis
            .split(" or ")
            .map(normalize)
            .filter(|alt| !alt.is_empty())
            .any(|alt| self.term_matches(&alt, &category, 0))
    }

    fn term_matches(&self, term: &str, category: &str, depth: usize) -> bool {
        if term == category {
            return true;
        }
        if self.classes.get(term).is_some_and(|m| m.contains(category)) {
            return true;
        }
        if depth < 2 {
            if let Some(targets) = self.aliases.get(term) {
                return targets.iter().any(|t| self.term_matches(t, category, depth + 1));
            }
            if let Some(singular) = term.strip_suffix('s') {
                return self.term_matches(singular, category, depth + 1);
            }
        }
        false
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when every proposed hypothesis is grounded in at least one
/// registry entry. An empty proposal never counts as sufficient.
pub fn sufficient(registry: &ItemRegistry, proposed: &[String]) -> bool {
    !proposed.is_empty() && proposed.iter().all(|h| !registry.matching(h).is_empty())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NextStation {
    Station(FixtureId),
    Done,
}

/// Observes at the robot's current station, merges into the registry and
/// names the next station of its route.
pub fn explore_step(
    state: &WorldState,
    robot: &RobotId,
    registry: &mut ItemRegistry,
    route: &[FixtureId],
) -> Result<NextStation, PerceptionError> {
    let obs = observe(state, robot)?;
    registry.merge(&obs);
    let next = match route.iter().position(|s| s == &obs.station) {
        Some(i) => route.get(i + 1),
        None => route.first(),
    };
    Ok(next.cloned().map_or(NextStation::Done, NextStation::Station))
}

/// Splits the station list into contiguous, disjoint routes, one per robot.
pub fn partition_routes(stations: &[FixtureId], robots: &[RobotId]) -> BTreeMap<RobotId, Vec<FixtureId>> {
    let mut routes = BTreeMap::new();
    if robots.is_empty() {
        return routes;
    }
    let chunk = stations.len().div_ceil(robots.len()).max(1);
    let mut chunks = stations.chunks(chunk);
    for r in robots {
        routes.insert(r.clone(), chunks.next().map(<[FixtureId]>::to_vec).unwrap_or_default());
    }
    routes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationVisit {
    pub step: usize,
    pub robot: RobotId,
    pub station: FixtureId,
    pub registry_size: usize,
    pub clock: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub visits: Vec<ExplorationVisit>,
    /// Simulated seconds spent moving between stations.
    pub elapsed: f64,
    /// Whether the sweep stopped because the hypotheses were grounded.
    pub stopped_early: bool,
    pub registry: ItemRegistry,
}

/// Sweeps the stations in parallel rounds until the hypotheses are grounded
/// or every route is exhausted. Operates on a scratch copy of the world.
pub fn explore(
    world: &WorldState,
    station_order: &[FixtureId],
    robots: &[RobotId],
    hypotheses: &[String],
    mut registry: ItemRegistry,
) -> ExplorationReport {
    let mut scratch = world.clone();
    let routes = partition_routes(station_order, robots);
    let mut cursor: BTreeMap<&RobotId, usize> = robots.iter().map(|r| (r, 0)).collect();
    let mut visits = Vec::new();
    let nav_time = scratch.dynamics.duration.navigate;
    let mut elapsed = 0.0;

    for r in robots {
        if let Ok(obs) = observe(&scratch, r) {
            registry.merge(&obs);
        }
    }
    let mut step = 0;
    loop {
        if sufficient(&registry, hypotheses) {
            return ExplorationReport { visits, elapsed, stopped_early: true, registry };
        }
        let mut pending: Vec<&RobotId> =
            robots.iter().filter(|r| cursor[r] < routes.get(*r).map_or(0, Vec::len)).collect();
        if pending.is_empty() {
            return ExplorationReport { visits, elapsed, stopped_early: false, registry };
        }
        step += 1;
        let mut moved = Vec::new();
        // Robots whose target is held by a teammate that is itself moving
        // this round go after it; anyone still blocked waits a round.
        loop {
            let before = pending.len();
            pending.retain(|r| {
                let target = &routes[*r][cursor[r]];
                let nav = Primitive::Navigate { robot: (*r).clone(), fixture: target.clone() };
                if scratch.check_preconditions(&nav).passed {
                    scratch.force_effects(&nav);
                    moved.push((*r).clone());
                    false
                } else {
                    true
                }
            });
            if pending.len() == before || pending.is_empty() {
                break;
            }
        }
        if moved.is_empty() {
            // Deadlocked: nobody can move, stop with what we have.
            return ExplorationReport { visits, elapsed, stopped_early: false, registry };
        }
        elapsed += nav_time;
        scratch.clock = elapsed;
        for r in &moved {
            *cursor.get_mut(r).expect("moved robots have cursors") += 1;
            let obs = observe(&scratch, r).expect("robot exists");
            registry.merge(&obs);
            visits.push(ExplorationVisit {
                step,
                robot: r.clone(),
                station: obs.station.clone(),
                registry_size: registry.len(),
                clock: elapsed,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_scenario, Scenario};

    fn scenario() -> Scenario {
        serde_json::from_value(serde_json::json!({
            "layout_id": "t",
            "style_id": "s",
            "fixtures": [
                {"id": "counter", "kind": "counter"},
                {"id": "cabinet", "kind": "cabinet", "door": "closed"},
                {"id": "sink", "kind": "sink", "powered": "off"},
                {"id": "microwave", "kind": "microwave", "door": "closed", "powered": "off"},
                {"id": "dock_a", "kind": "dock"},
                {"id": "dock_b", "kind": "dock"}
            ],
            "objects": [
                {"id": "carrot", "category": "carrot", "at": "counter"},
                {"id": "bowl", "category": "bowl", "receptacle": true, "at": "cabinet"},
                {"id": "salmon", "category": "salmon", "thermal": "frozen", "at": "sink"}
            ],
            "robots": [{"id": "A", "home": "dock_a"}, {"id": "B", "home": "dock_b"}]
        }))
        .unwrap()
    }

    fn world_with(robot_at: &str) -> WorldState {
        let mut w = load_scenario(&scenario()).unwrap();
        w.robots.get_mut(&RobotId::new("A")).unwrap().at = robot_at.into();
        w
    }

    #[test]
    fn counter_shows_carrot() {
        let obs = observe(&world_with("counter"), &"A".into()).unwrap();
        assert!(obs.object(&"carrot".into()).is_some());
        assert_eq!(obs.visible_fixtures.len(), 1);
    }

    #[test]
    fn closed_cabinet_hides_its_contents() {
        let obs = observe(&world_with("cabinet"), &"A".into()).unwrap();
        assert_eq!(obs.visible_fixtures[0].contents, Contents::Enclosed);
        assert!(obs.visible_objects.is_empty());
    }

    #[test]
    fn unknown_robot_is_an_error() {
        let w = world_with("counter");
        assert_eq!(observe(&w, &"Z".into()), Err(PerceptionError::UnknownRobot("Z".into())));
    }

    #[test]
    fn serialization_is_stable() {
        let w = world_with("counter");
        let a = observe(&w, &"A".into()).unwrap().to_json();
        let b = observe(&w.clone(), &"A".into()).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.find("visible_fixtures").unwrap() < a.find("visible_objects").unwrap());
    }

    #[test]
    fn registry_records_station() {
        let mut reg = ItemRegistry::default();
        let next = explore_step(&world_with("counter"), &"A".into(), &mut reg, &["counter".into(), "sink".into()]);
        assert_eq!(next.unwrap(), NextStation::Station("sink".into()));
        assert_eq!(reg.entries["carrot"].station, FixtureId::new("counter"));
        let done = explore_step(&world_with("sink"), &"A".into(), &mut reg, &["counter".into(), "sink".into()]);
        assert_eq!(done.unwrap(), NextStation::Done);
        assert!(reg.contains("sink/faucet"));
    }

    #[test]
    fn six_stations_split_three_each() {
        let s = scenario();
        let stations: Vec<FixtureId> = s.fixtures.iter().map(|f| f.id.clone()).collect();
        let routes = partition_routes(&stations, &["A".into(), "B".into()]);
        assert_eq!(routes[&RobotId::new("A")].len(), 3);
        assert_eq!(routes[&RobotId::new("B")].len(), 3);
        let w = load_scenario(&s).unwrap();
        let report = explore(&w, &stations, &["A".into(), "B".into()], &[], ItemRegistry::default());
        assert!(!report.stopped_early);
        assert_eq!(report.elapsed, 3.0 * 2.0);
        assert_eq!(report.visits.len(), 6);
    }

    #[test]
    fn sufficiency_rules() {
        let mut reg = ItemRegistry::default();
        reg.merge(&observe(&world_with("counter"), &"A".into()).unwrap());
        reg.merge(&observe(&world_with("microwave"), &"A".into()).unwrap());
        assert!(sufficient(&reg, &["microwave".into(), "carrot".into()]));
        assert!(sufficient(&reg, &["microwave or stove".into(), "vegetable".into()]));
        assert!(!sufficient(&reg, &["pan".into()]));
        assert!(!sufficient(&reg, &[]));
    }

    #[test]
    fn vocabulary_handles_aliases_and_plurals() {
        let v = Vocabulary::bundled();
        assert!(v.matches("vegetables", "carrot"));
        assert!(v.matches("frozen food", "salmon"));
        assert!(v.matches("frozen food", "steak"));
        assert!(!v.matches("fish", "steak"));
        assert!(v.matches("Bowl", "bowl"));
        let total: usize = v.classes().map(|(_, m)| m.len()).sum();
        assert!(total >= 50);
    }
}
