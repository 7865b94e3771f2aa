//! Deterministic symbolic kitchen.
//!
//! The world is a set of fixtures (each one a station a robot can stand at),
//! objects located in fixtures, inside other objects, or in a gripper, and
//! robots. All mutation goes through [`WorldState::apply`], which checks the
//! primitive's preconditions, rolls the primitive's success probability from
//! a caller-supplied rng and charges the primitive's duration to the clock.

mod primitive;
mod scenario;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};
use crate::verdict::Verdict;

pub use primitive::{Primitive, PrimitiveOutcome, SideEffect};
pub use scenario::{
    Door, FixtureKind, FixtureSpec, ObjectSpec, PerPrimitive, Power, PrimitiveKind, RobotSpec, Scenario,
    ScenarioError, Thermal,
};

/// Where an object currently is.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Fixture(FixtureId),
    Object(ObjectId),
    Gripper(RobotId),
    /// Dropped on the floor in front of a station.
    Floor(FixtureId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureState {
    pub kind: FixtureKind,
    pub door: Door,
    pub powered: Power,
    /// Only ever set for sinks: tracks the faucet.
    #[serde(default)]
    pub water_running: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub category: String,
    #[serde(default)]
    pub receptacle: bool,
    pub location: Location,
    pub thermal: Thermal,
    #[serde(default)]
    pub wet: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: RobotId,
    pub at: FixtureId,
    pub holding: Option<ObjectId>,
    pub home: FixtureId,
}

/// Success probabilities and durations that drive [`WorldState::apply`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub success: PerPrimitive<f64>,
    pub duration: PerPrimitive<f64>,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { success: PerPrimitive::uniform(1.0), duration: PerPrimitive::default_durations() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub fixtures: BTreeMap<FixtureId, FixtureState>,
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub robots: BTreeMap<RobotId, RobotState>,
    pub clock: f64,
    pub dynamics: Dynamics,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("precondition violated for {primitive}: {reason}")]
    PreconditionViolated { primitive: String, reason: String },
}

/// Builds the initial world for a scenario.
pub fn load_scenario(spec: &Scenario) -> Result<WorldState, ScenarioError> {
    spec.validate()?;
    let fixtures = spec
        .fixtures
        .iter()
        .map(|f| {
            let state = FixtureState {
                kind: f.kind,
                door: f.door,
                powered: f.powered,
                water_running: f.kind == FixtureKind::Sink && f.powered == Power::On,
            };
            (f.id.clone(), state)
        })
        .collect();
    let objects = spec
        .objects
        .iter()
        .map(|o| {
            let state = ObjectState {
                category: o.category.clone(),
                receptacle: o.receptacle,
                location: Location::Fixture(o.at.clone()),
                thermal: o.thermal,
                wet: false,
            };
            (o.id.clone(), state)
        })
        .collect();
    let robots = spec
        .robots
        .iter()
        .map(|r| {
            let state = RobotState { id: r.id.clone(), at: r.home.clone(), holding: None, home: r.home.clone() };
            (r.id.clone(), state)
        })
        .collect();
    Ok(WorldState {
        fixtures,
        objects,
        robots,
        clock: 0.0,
        dynamics: Dynamics {
            success: spec.primitive_success_prob.clone(),
            duration: spec.duration_table.clone(),
        },
    })
}

impl WorldState {
    /// Where the containment chain of an object ends: a fixture, the floor
    /// or a gripper. `None` if the chain is broken or cyclic.
    pub fn outermost(&self, object: &ObjectId) -> Option<&Location> {
        let mut current = self.objects.get(object)?;
        for _ in 0..=self.objects.len() {
            match &current.location {
                Location::Object(parent) => current = self.objects.get(parent)?,
                end => return Some(end),
            }
        }
        None
    }

    /// The fixture an object ultimately rests in, following containment.
    /// `None` when the chain ends in a gripper or on the floor.
    pub fn root_fixture(&self, object: &ObjectId) -> Option<&FixtureId> {
        match self.outermost(object)? {
            Location::Fixture(f) => Some(f),
            _ => None,
        }
    }

    /// The robot whose gripper the object is (transitively) in.
    pub fn holder(&self, object: &ObjectId) -> Option<&RobotId> {
        match self.outermost(object)? {
            Location::Gripper(r) => Some(r),
            _ => None,
        }
    }

    /// The station an object can be observed from.
    pub fn station_of(&self, object: &ObjectId) -> Option<&FixtureId> {
        match self.outermost(object)? {
            Location::Fixture(f) | Location::Floor(f) => Some(f),
            Location::Gripper(r) => self.robots.get(r).map(|r| &r.at),
            Location::Object(_) => None,
        }
    }

    /// Whether an object not held by anyone can be reached (no closed door in the way).
    pub fn accessible(&self, object: &ObjectId) -> bool {
        match self.outermost(object) {
            Some(Location::Fixture(f)) => self.fixtures.get(f).is_some_and(|f| f.door != Door::Closed),
            Some(Location::Floor(_)) => true,
            _ => false,
        }
    }

    pub fn occupant(&self, fixture: &FixtureId) -> Option<&RobotId> {
        self.robots.values().find(|r| &r.at == fixture).map(|r| &r.id)
    }

    /// A receptacle resting directly in the fixture.
    pub fn receptacle_at(&self, fixture: &FixtureId) -> Option<&ObjectId> {
        self.objects
            .iter()
            .find(|(_, o)| o.receptacle && o.location == Location::Fixture(fixture.clone()))
            .map(|(id, _)| id)
    }

    /// Ids of every object whose root fixture is `fixture`.
    pub fn objects_in(&self, fixture: &FixtureId) -> Vec<ObjectId> {
        self.objects
            .keys()
            .filter(|id| self.root_fixture(id) == Some(fixture))
            .cloned()
            .collect()
    }

    /// Evaluates a primitive's preconditions against this state.
    pub fn check_preconditions(&self, p: &Primitive) -> Verdict {
        let Some(robot) = self.robots.get(p.robot()) else {
            return Verdict::fail(format!("unknown robot `{}`", p.robot()));
        };
        if let Some(f) = p.fixture() {
            if !self.fixtures.contains_key(f) {
                return Verdict::fail(format!("unknown fixture `{f}`"));
            }
        }
        if let Some(o) = p.object() {
            if !self.objects.contains_key(o) {
                return Verdict::fail(format!("unknown object `{o}`"));
            }
        }

        match p {
            Primitive::Navigate { fixture, .. } => match self.occupant(fixture) {
                Some(other) if other != &robot.id => {
                    Verdict::fail(format!("station `{fixture}` occupied by `{other}`"))
                }
                _ => Verdict::pass(),
            },
            Primitive::Pick { object, .. } => {
                if robot.holding.is_some() {
                    return Verdict::fail("gripper not empty");
                }
                if self.holder(object).is_some() {
                    return Verdict::fail(format!("`{object}` is held by a robot"));
                }
                if self.station_of(object) != Some(&robot.at) {
                    return Verdict::fail(format!("robot not at the station of `{object}`"));
                }
                if !self.accessible(object) {
                    return Verdict::fail("object inaccessible: enclosing door closed");
                }
                Verdict::pass()
            }
            Primitive::Place { object, fixture, .. } | Primitive::PlaceAndStart { object, fixture, .. } => {
                let target = &self.fixtures[fixture];
                if &robot.at != fixture {
                    return Verdict::fail(format!("robot not at target `{fixture}`"));
                }
                if robot.holding.as_ref() != Some(object) {
                    return Verdict::fail(format!("robot not holding `{object}`"));
                }
                if target.door == Door::Closed {
                    return Verdict::fail(format!("target inaccessible: `{fixture}` door closed"));
                }
                if target.kind.requires_receptacle()
                    && !self.objects[object].receptacle
                    && self.receptacle_at(fixture).is_none()
                {
                    return Verdict::fail(format!("no container at `{fixture}`"));
                }
                if p.kind() == PrimitiveKind::PlaceAndStart && target.powered == Power::Absent {
                    return Verdict::fail(format!("`{fixture}` is not powerable"));
                }
                Verdict::pass()
            }
            Primitive::Open { fixture, .. } | Primitive::Close { fixture, .. } => {
                let target = &self.fixtures[fixture];
                let opening = p.kind() == PrimitiveKind::Open;
                if &robot.at != fixture {
                    return Verdict::fail(format!("robot not at `{fixture}`"));
                }
                match (target.door, opening) {
                    (Door::Absent, _) => return Verdict::fail(format!("`{fixture}` has no door")),
                    (Door::Open, true) => return Verdict::fail(format!("`{fixture}` door already open")),
                    (Door::Closed, false) => return Verdict::fail(format!("`{fixture}` door already closed")),
                    _ => {}
                }
                if robot.holding.is_some() {
                    return Verdict::fail("gripper not empty");
                }
                Verdict::pass()
            }
            Primitive::TurnOn { fixture, .. } | Primitive::TurnOff { fixture, .. } => {
                let target = &self.fixtures[fixture];
                if &robot.at != fixture {
                    return Verdict::fail(format!("robot not at `{fixture}`"));
                }
                if target.powered == Power::Absent {
                    return Verdict::fail(format!("`{fixture}` is not powerable"));
                }
                if target.door == Door::Open {
                    return Verdict::fail(format!("`{fixture}` door open"));
                }
                Verdict::pass()
            }
        }
    }

    /// Runs a primitive and charges its duration to the clock.
    pub fn apply<R: Rng + ?Sized>(&mut self, p: &Primitive, rng: &mut R) -> Result<PrimitiveOutcome, WorldError> {
        let outcome = self.apply_untimed(p, rng)?;
        self.clock += outcome.elapsed;
        Ok(outcome)
    }

    /// Like [`apply`](Self::apply) but leaves the clock alone. Used when a
    /// parallel layer is charged as a whole.
    pub fn apply_untimed<R: Rng + ?Sized>(
        &mut self,
        p: &Primitive,
        rng: &mut R,
    ) -> Result<PrimitiveOutcome, WorldError> {
        let verdict = self.check_preconditions(p);
        if !verdict.passed {
            return Err(WorldError::PreconditionViolated { primitive: p.to_string(), reason: verdict.reason });
        }
        let kind = p.kind();
        let roll: f64 = rng.gen();
        let succeeded = roll < self.dynamics.success.get(kind);
        let elapsed = self.dynamics.duration.get(kind);

        let side_effect = if succeeded {
            self.force_effects(p);
            SideEffect::None
        } else {
            match p {
                Primitive::Place { robot, object, .. } | Primitive::PlaceAndStart { robot, object, .. } => {
                    let station = self.robots[robot].at.clone();
                    self.set_location(object, Location::Floor(station.clone()));
                    SideEffect::ObjectDropped { object: object.clone(), fixture: station }
                }
                _ => SideEffect::None,
            }
        };
        Ok(PrimitiveOutcome { succeeded, side_effect, elapsed })
    }

    pub fn advance_clock(&mut self, seconds: f64) {
        debug_assert!(seconds >= 0.0);
        self.clock += seconds.max(0.0);
    }

    /// Applies a primitive's nominal effects without checking anything.
    ///
    /// Planners use this to roll a belief forward, including through steps
    /// that would not actually be feasible.
    pub fn force_effects(&mut self, p: &Primitive) {
        match p {
            Primitive::Navigate { robot, fixture } => {
                if let Some(r) = self.robots.get_mut(robot) {
                    r.at = fixture.clone();
                }
            }
            Primitive::Pick { robot, object } => {
                if let Some(previous) = self.robots.get(robot).and_then(|r| r.holding.clone()) {
                    if previous != *object {
                        let at = self.robots[robot].at.clone();
                        self.set_location(&previous, Location::Fixture(at));
                    }
                }
                self.set_location(object, Location::Gripper(robot.clone()));
            }
            Primitive::Place { object, fixture, .. } => {
                self.put_into(object, fixture);
                self.apply_power_effects(fixture);
            }
            Primitive::Open { fixture, .. } => self.set_door(fixture, Door::Open),
            Primitive::Close { fixture, .. } => self.set_door(fixture, Door::Closed),
            Primitive::TurnOn { fixture, .. } => self.set_power(fixture, Power::On),
            Primitive::TurnOff { fixture, .. } => self.set_power(fixture, Power::Off),
            Primitive::PlaceAndStart { object, fixture, .. } => {
                self.put_into(object, fixture);
                self.set_door(fixture, Door::Closed);
                self.set_power(fixture, Power::On);
            }
        }
    }

    fn put_into(&mut self, object: &ObjectId, fixture: &FixtureId) {
        let Some(kind) = self.fixtures.get(fixture).map(|f| f.kind) else { return };
        let is_receptacle = self.objects.get(object).is_some_and(|o| o.receptacle);
        let location = match self.receptacle_at(fixture) {
            Some(c) if kind.requires_receptacle() && !is_receptacle && c != object => Location::Object(c.clone()),
            _ => Location::Fixture(fixture.clone()),
        };
        self.set_location(object, location);
    }

    /// Moves an object, keeping gripper bookkeeping consistent.
    fn set_location(&mut self, object: &ObjectId, location: Location) {
        let Some(state) = self.objects.get_mut(object) else { return };
        if let Location::Gripper(old) = &state.location {
            if let Some(r) = self.robots.get_mut(old) {
                if r.holding.as_ref() == Some(object) {
                    r.holding = None;
                }
            }
        }
        if let Location::Gripper(new) = &location {
            if let Some(r) = self.robots.get_mut(new) {
                r.holding = Some(object.clone());
            }
        }
        state.location = location;
    }

    fn set_door(&mut self, fixture: &FixtureId, door: Door) {
        if let Some(f) = self.fixtures.get_mut(fixture) {
            if f.door != Door::Absent {
                f.door = door;
            }
        }
    }

    fn set_power(&mut self, fixture: &FixtureId, power: Power) {
        let Some(f) = self.fixtures.get_mut(fixture) else { return };
        if f.powered == Power::Absent {
            return;
        }
        f.powered = power;
        if f.kind == FixtureKind::Sink {
            f.water_running = power == Power::On;
        }
        if power == Power::On {
            self.apply_power_effects(fixture);
        }
    }

    /// Heating and defrosting for whatever sits in a running fixture.
    fn apply_power_effects(&mut self, fixture: &FixtureId) {
        let Some(f) = self.fixtures.get(fixture) else { return };
        if f.powered != Power::On {
            return;
        }
        let kind = f.kind;
        let contents: Vec<ObjectId> = match kind {
            FixtureKind::Microwave => self.objects_in(fixture),
            // Only food sitting in a pan or bowl is affected; the vessel itself is not.
            FixtureKind::Stove | FixtureKind::Sink => self
                .objects
                .iter()
                .filter(|(_, o)| {
                    matches!(&o.location, Location::Object(parent)
                        if self.objects.get(parent).is_some_and(|p| p.receptacle)
                            && self.root_fixture(parent) == Some(fixture))
                })
                .map(|(id, _)| id.clone())
                .collect(),
            _ => Vec::new(),
        };
        for id in contents {
            let o = self.objects.get_mut(&id).expect("collected from the map");
            match kind {
                FixtureKind::Microwave | FixtureKind::Stove => o.thermal = Thermal::Heated,
                FixtureKind::Sink => {
                    o.wet = true;
                    o.thermal = Thermal::Ambient;
                }
                _ => {}
            }
        }
    }

    /// Lists every violated state invariant. Empty for every reachable state.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.clock.is_finite() || self.clock < 0.0 {
            out.push(format!("clock out of range: {}", self.clock));
        }
        for (id, o) in &self.objects {
            match &o.location {
                Location::Fixture(f) if !self.fixtures.contains_key(f) => {
                    out.push(format!("`{id}` located in unknown fixture `{f}`"))
                }
                Location::Floor(f) if !self.fixtures.contains_key(f) => {
                    out.push(format!("`{id}` dropped at unknown station `{f}`"))
                }
                Location::Object(p) if !self.objects.contains_key(p) => {
                    out.push(format!("`{id}` located in unknown object `{p}`"))
                }
                Location::Gripper(r) => match self.robots.get(r) {
                    None => out.push(format!("`{id}` held by unknown robot `{r}`")),
                    Some(robot) if robot.holding.as_ref() != Some(id) => {
                        out.push(format!("`{id}` claims gripper of `{r}` which holds {:?}", robot.holding))
                    }
                    _ => {}
                },
                _ => {}
            }
            if self.outermost(id).is_none() {
                out.push(format!("`{id}` has no resolvable location (cycle?)"));
            }
        }
        let mut stations = BTreeMap::new();
        for r in self.robots.values() {
            if !self.fixtures.contains_key(&r.at) {
                out.push(format!("robot `{}` at unknown station `{}`", r.id, r.at));
            }
            if let Some(other) = stations.insert(&r.at, &r.id) {
                out.push(format!("robots `{other}` and `{}` share station `{}`", r.id, r.at));
            }
            if let Some(o) = &r.holding {
                match self.objects.get(o) {
                    Some(obj) if obj.location == Location::Gripper(r.id.clone()) => {}
                    _ => out.push(format!("robot `{}` holding `{o}` which is elsewhere", r.id)),
                }
            }
        }
        out
    }
}
