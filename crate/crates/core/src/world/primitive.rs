use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};
use crate::world::PrimitiveKind;

/// A single robot skill invocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Navigate { robot: RobotId, fixture: FixtureId },
    Pick { robot: RobotId, object: ObjectId },
    Place { robot: RobotId, object: ObjectId, fixture: FixtureId },
    Open { robot: RobotId, fixture: FixtureId },
    Close { robot: RobotId, fixture: FixtureId },
    TurnOn { robot: RobotId, fixture: FixtureId },
    TurnOff { robot: RobotId, fixture: FixtureId },
    /// Places the held object, shuts the door if there is one and powers the fixture on.
    PlaceAndStart { robot: RobotId, object: ObjectId, fixture: FixtureId },
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Navigate { .. } => PrimitiveKind::Navigate,
            Primitive::Pick { .. } => PrimitiveKind::Pick,
            Primitive::Place { .. } => PrimitiveKind::Place,
            Primitive::Open { .. } => PrimitiveKind::Open,
            Primitive::Close { .. } => PrimitiveKind::Close,
            Primitive::TurnOn { .. } => PrimitiveKind::TurnOn,
            Primitive::TurnOff { .. } => PrimitiveKind::TurnOff,
            Primitive::PlaceAndStart { .. } => PrimitiveKind::PlaceAndStart,
        }
    }

    pub fn robot(&self) -> &RobotId {
        match self {
            Primitive::Navigate { robot, .. }
            | Primitive::Pick { robot, .. }
            | Primitive::Place { robot, .. }
            | Primitive::Open { robot, .. }
            | Primitive::Close { robot, .. }
            | Primitive::TurnOn { robot, .. }
            | Primitive::TurnOff { robot, .. }
            | Primitive::PlaceAndStart { robot, .. } => robot,
        }
    }

    pub fn object(&self) -> Option<&ObjectId> {
        match self {
            Primitive::Pick { object, .. }
            | Primitive::Place { object, .. }
            | Primitive::PlaceAndStart { object, .. } => Some(object),
            _ => None,
        }
    }

    pub fn fixture(&self) -> Option<&FixtureId> {
        match self {
            Primitive::Navigate { fixture, .. }
            | Primitive::Place { fixture, .. }
            | Primitive::Open { fixture, .. }
            | Primitive::Close { fixture, .. }
            | Primitive::TurnOn { fixture, .. }
            | Primitive::TurnOff { fixture, .. }
            | Primitive::PlaceAndStart { fixture, .. } => Some(fixture),
            Primitive::Pick { .. } => None,
        }
    }

    /// Positional arguments in canonical order: object first, then fixture.
    pub fn args(&self) -> Vec<String> {
        self.object()
            .map(|o| o.to_string())
            .into_iter()
            .chain(self.fixture().map(|f| f.to_string()))
            .collect()
    }

    /// Rebuilds a primitive from a verb and its positional arguments.
    pub fn from_parts(kind: PrimitiveKind, robot: RobotId, args: &[String]) -> Option<Self> {
        let fixture = |i: usize| args.get(i).map(|s| FixtureId::new(s.as_str()));
        let object = |i: usize| args.get(i).map(|s| ObjectId::new(s.as_str()));
        let expected = match kind {
            PrimitiveKind::Pick | PrimitiveKind::Navigate => 1,
            PrimitiveKind::Place | PrimitiveKind::PlaceAndStart => 2,
            _ => 1,
        };
        if args.len() != expected {
            return None;
        }
        Some(match kind {
            PrimitiveKind::Navigate => Primitive::Navigate { robot, fixture: fixture(0)? },
            PrimitiveKind::Pick => Primitive::Pick { robot, object: object(0)? },
            PrimitiveKind::Place => Primitive::Place { robot, object: object(0)?, fixture: fixture(1)? },
            PrimitiveKind::Open => Primitive::Open { robot, fixture: fixture(0)? },
            PrimitiveKind::Close => Primitive::Close { robot, fixture: fixture(0)? },
            PrimitiveKind::TurnOn => Primitive::TurnOn { robot, fixture: fixture(0)? },
            PrimitiveKind::TurnOff => Primitive::TurnOff { robot, fixture: fixture(0)? },
            PrimitiveKind::PlaceAndStart => {
                Primitive::PlaceAndStart { robot, object: object(0)?, fixture: fixture(1)? }
            }
        })
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}({})", self.robot(), self.kind().as_str(), self.args().join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideEffect {
    None,
    ObjectDropped { object: ObjectId, fixture: FixtureId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveOutcome {
    pub succeeded: bool,
    pub side_effect: SideEffect,
    /// Charged whether or not the skill succeeded.
    pub elapsed: f64,
}
