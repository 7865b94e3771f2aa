//! Serializable conditions over the scene: subtask goals and task goals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};
use crate::world::{Door, Location, Power, Primitive, Thermal, WorldState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    All { of: Vec<Predicate> },
    RobotAt { robot: RobotId, fixture: FixtureId },
    Holding { robot: RobotId, object: ObjectId },
    /// The object rests in the fixture. With `contained`, it must sit in a
    /// receptacle that itself rests directly in the fixture.
    ObjectIn {
        object: ObjectId,
        fixture: FixtureId,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        contained: bool,
    },
    Door { fixture: FixtureId, state: Door },
    Power { fixture: FixtureId, state: Power },
    Thermal { object: ObjectId, state: Thermal },
}

impl Predicate {
    /// What a successfully executed primitive leaves true.
    ///
    /// `contained` says whether a placed object is expected to end up inside
    /// a receptacle at the target.
    pub fn achieved_by(p: &Primitive, contained: bool) -> Predicate {
        match p.clone() {
            Primitive::Navigate { robot, fixture } => Predicate::RobotAt { robot, fixture },
            Primitive::Pick { robot, object } => Predicate::Holding { robot, object },
            Primitive::Place { object, fixture, .. } => Predicate::ObjectIn { object, fixture, contained },
            Primitive::Open { fixture, .. } => Predicate::Door { fixture, state: Door::Open },
            Primitive::Close { fixture, .. } => Predicate::Door { fixture, state: Door::Closed },
            Primitive::TurnOn { fixture, .. } => Predicate::Power { fixture, state: Power::On },
            Primitive::TurnOff { fixture, .. } => Predicate::Power { fixture, state: Power::Off },
            Primitive::PlaceAndStart { object, fixture, .. } => Predicate::All {
                of: vec![
                    Predicate::ObjectIn { object, fixture: fixture.clone(), contained },
                    Predicate::Power { fixture, state: Power::On },
                ],
            },
        }
    }

    pub fn holds(&self, world: &WorldState) -> bool {
        self.unmet(world).is_none()
    }

    /// `None` when the predicate holds in the world, otherwise a short reason.
    pub fn unmet(&self, world: &WorldState) -> Option<String> {
        match self {
            Predicate::All { of } => of.iter().find_map(|p| p.unmet(world)),
            Predicate::RobotAt { robot, fixture } => match world.robots.get(robot) {
                Some(r) if &r.at == fixture => None,
                _ => Some(format!("robot `{robot}` not at `{fixture}`")),
            },
            Predicate::Holding { robot, object } => match world.robots.get(robot) {
                Some(r) if r.holding.as_ref() == Some(object) => None,
                _ => Some(format!("robot `{robot}` not holding `{object}`")),
            },
            Predicate::ObjectIn { object, fixture, contained } => {
                if world.root_fixture(object) != Some(fixture) {
                    return Some(format!("object not in target: `{object}` not in `{fixture}`"));
                }
                if *contained {
                    let in_vessel = match world.objects.get(object).map(|o| &o.location) {
                        Some(Location::Object(parent)) => world.objects.get(parent).is_some_and(|p| {
                            p.receptacle && p.location == Location::Fixture(fixture.clone())
                        }),
                        _ => false,
                    };
                    if !in_vessel {
                        return Some(format!("`{object}` not in a container at `{fixture}`"));
                    }
                }
                None
            }
            Predicate::Door { fixture, state } => match world.fixtures.get(fixture) {
                Some(f) if f.door == *state => None,
                _ => Some(format!("`{fixture}` door not {}", door_word(*state))),
            },
            Predicate::Power { fixture, state } => match world.fixtures.get(fixture) {
                Some(f) if f.powered == *state => None,
                _ => Some(format!("`{fixture}` not {}", power_word(*state))),
            },
            Predicate::Thermal { object, state } => match world.objects.get(object) {
                Some(o) if o.thermal == *state => None,
                _ => Some(format!("`{object}` not {}", thermal_word(*state))),
            },
        }
    }

    /// Flattens nested conjunctions into their leaves.
    pub fn leaves(&self) -> Vec<&Predicate> {
        match self {
            Predicate::All { of } => of.iter().flat_map(|p| p.leaves()).collect(),
            other => vec![other],
        }
    }
}

pub(crate) fn door_word(d: Door) -> &'static str {
    match d {
        Door::Open => "open",
        Door::Closed => "closed",
        Door::Absent => "absent",
    }
}

pub(crate) fn power_word(p: Power) -> &'static str {
    match p {
        Power::On => "on",
        Power::Off => "off",
        Power::Absent => "unpowered",
    }
}

pub(crate) fn thermal_word(t: Thermal) -> &'static str {
    match t {
        Thermal::Frozen => "frozen",
        Thermal::Ambient => "ambient",
        Thermal::Heated => "heated",
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::All { of } => {
                let parts: Vec<String> = of.iter().map(|p| p.to_string()).collect();
                write!(f, "{}", parts.join(" & "))
            }
            Predicate::RobotAt { robot, fixture } => write!(f, "at({robot}, {fixture})"),
            Predicate::Holding { robot, object } => write!(f, "holding({robot}, {object})"),
            Predicate::ObjectIn { object, fixture, contained: false } => write!(f, "in({object}, {fixture})"),
            Predicate::ObjectIn { object, fixture, contained: true } => {
                write!(f, "in_container({object}, {fixture})")
            }
            Predicate::Door { fixture, state } => write!(f, "door({fixture}) = {}", door_word(*state)),
            Predicate::Power { fixture, state } => write!(f, "power({fixture}) = {}", power_word(*state)),
            Predicate::Thermal { object, state } => write!(f, "thermal({object}) = {}", thermal_word(*state)),
        }
    }
}
