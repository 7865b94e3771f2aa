use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, ObjectId, RobotId};

/// The eight primitive skills a robot can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Navigate,
    Pick,
    Place,
    Open,
    Close,
    TurnOn,
    TurnOff,
    PlaceAndStart,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 8] = [
        PrimitiveKind::Navigate,
        PrimitiveKind::Pick,
        PrimitiveKind::Place,
        PrimitiveKind::Open,
        PrimitiveKind::Close,
        PrimitiveKind::TurnOn,
        PrimitiveKind::TurnOff,
        PrimitiveKind::PlaceAndStart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::Navigate => "navigate",
            PrimitiveKind::Pick => "pick",
            PrimitiveKind::Place => "place",
            PrimitiveKind::Open => "open",
            PrimitiveKind::Close => "close",
            PrimitiveKind::TurnOn => "turn_on",
            PrimitiveKind::TurnOff => "turn_off",
            PrimitiveKind::PlaceAndStart => "place_and_start",
        }
    }
}

/// One value per primitive kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerPrimitive<T> {
    pub navigate: T,
    pub pick: T,
    pub place: T,
    pub open: T,
    pub close: T,
    pub turn_on: T,
    pub turn_off: T,
    pub place_and_start: T,
}

impl<T: Copy> PerPrimitive<T> {
    pub fn uniform(value: T) -> Self {
        Self {
            navigate: value,
            pick: value,
            place: value,
            open: value,
            close: value,
            turn_on: value,
            turn_off: value,
            place_and_start: value,
        }
    }

    pub fn get(&self, kind: PrimitiveKind) -> T {
        match kind {
            PrimitiveKind::Navigate => self.navigate,
            PrimitiveKind::Pick => self.pick,
            PrimitiveKind::Place => self.place,
            PrimitiveKind::Open => self.open,
            PrimitiveKind::Close => self.close,
            PrimitiveKind::TurnOn => self.turn_on,
            PrimitiveKind::TurnOff => self.turn_off,
            PrimitiveKind::PlaceAndStart => self.place_and_start,
        }
    }

    fn iter(&self) -> impl Iterator<Item = (PrimitiveKind, T)> + '_ {
        PrimitiveKind::ALL.into_iter().map(|k| (k, self.get(k)))
    }
}

impl PerPrimitive<f64> {
    /// Simulated seconds per primitive used throughout the benchmark.
    pub fn default_durations() -> Self {
        Self {
            navigate: 2.0,
            pick: 1.5,
            place: 1.5,
            open: 1.0,
            close: 1.0,
            turn_on: 0.5,
            turn_off: 0.5,
            place_and_start: 2.0,
        }
    }

    /// Success probabilities where every manipulation skill succeeds with
    /// `p` and navigation always succeeds.
    pub fn manipulation_success(p: f64) -> Self {
        Self { navigate: 1.0, ..Self::uniform(p) }
    }
}

fn default_durations() -> PerPrimitive<f64> {
    PerPrimitive::default_durations()
}

fn default_success() -> PerPrimitive<f64> {
    PerPrimitive::uniform(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Counter,
    Island,
    Shelf,
    Cabinet,
    Microwave,
    Sink,
    Stove,
    Fridge,
    Dishwasher,
    Dock,
}

impl FixtureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FixtureKind::Counter => "counter",
            FixtureKind::Island => "island",
            FixtureKind::Shelf => "shelf",
            FixtureKind::Cabinet => "cabinet",
            FixtureKind::Microwave => "microwave",
            FixtureKind::Sink => "sink",
            FixtureKind::Stove => "stove",
            FixtureKind::Fridge => "fridge",
            FixtureKind::Dishwasher => "dishwasher",
            FixtureKind::Dock => "dock",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "counter" => FixtureKind::Counter,
            "island" => FixtureKind::Island,
            "shelf" => FixtureKind::Shelf,
            "cabinet" => FixtureKind::Cabinet,
            "microwave" => FixtureKind::Microwave,
            "sink" => FixtureKind::Sink,
            "stove" => FixtureKind::Stove,
            "fridge" => FixtureKind::Fridge,
            "dishwasher" => FixtureKind::Dishwasher,
            "dock" => FixtureKind::Dock,
            _ => return None,
        })
    }

    pub fn has_door(self) -> bool {
        matches!(
            self,
            FixtureKind::Cabinet | FixtureKind::Microwave | FixtureKind::Fridge | FixtureKind::Dishwasher
        )
    }

    pub fn powerable(self) -> bool {
        matches!(
            self,
            FixtureKind::Microwave | FixtureKind::Stove | FixtureKind::Sink | FixtureKind::Dishwasher
        )
    }

    /// Food put here must sit in a bowl or pan.
    pub fn requires_receptacle(self) -> bool {
        matches!(self, FixtureKind::Sink | FixtureKind::Stove)
    }

    /// Contents stay visible through the closed door.
    pub fn has_window(self) -> bool {
        self == FixtureKind::Microwave
    }

    /// Plain surfaces where a robot may set something down.
    pub fn is_surface(self) -> bool {
        matches!(self, FixtureKind::Counter | FixtureKind::Island | FixtureKind::Shelf)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Door {
    #[default]
    #[serde(rename = "none")]
    Absent,
    Open,
    Closed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Power {
    #[default]
    #[serde(rename = "none")]
    Absent,
    Off,
    On,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thermal {
    Frozen,
    #[default]
    Ambient,
    Heated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub id: FixtureId,
    pub kind: FixtureKind,
    #[serde(default)]
    pub door: Door,
    #[serde(default)]
    pub powered: Power,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub category: String,
    #[serde(default)]
    pub receptacle: bool,
    #[serde(default)]
    pub thermal: Thermal,
    /// Initial placement.
    pub at: FixtureId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: RobotId,
    pub home: FixtureId,
}

/// A complete, self-contained kitchen description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub layout_id: String,
    pub style_id: String,
    pub fixtures: Vec<FixtureSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub robots: Vec<RobotSpec>,
    #[serde(default = "default_success")]
    pub primitive_success_prob: PerPrimitive<f64>,
    #[serde(default = "default_durations")]
    pub duration_table: PerPrimitive<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fixture(&self, id: &str) -> Option<&FixtureSpec> {
        self.fixtures.iter().find(|f| f.id.as_str() == id)
    }

    pub fn robot_ids(&self) -> Vec<RobotId> {
        let mut ids: Vec<_> = self.robots.iter().map(|r| r.id.clone()).collect();
        ids.sort();
        ids
    }

    /// Checks every scenario invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let all_ids = self
            .fixtures
            .iter()
            .map(|f| f.id.as_str())
            .chain(self.objects.iter().map(|o| o.id.as_str()))
            .chain(self.robots.iter().map(|r| r.id.as_str()));
        for id in all_ids {
            if id.is_empty() {
                out.push("empty identifier".to_owned());
            } else if !seen.insert(id) {
                out.push(format!("duplicate identifier `{id}`"));
            }
        }

        for f in &self.fixtures {
            match (f.kind.has_door(), f.door) {
                (true, Door::Absent) => {
                    out.push(format!("fixture `{}` has a door but declares no door state", f.id))
                }
                (false, Door::Open | Door::Closed) => {
                    out.push(format!("fixture `{}` ({}) cannot have a door", f.id, f.kind.as_str()))
                }
                _ => {}
            }
            match (f.kind.powerable(), f.powered) {
                (true, Power::Absent) => {
                    out.push(format!("fixture `{}` is powerable but declares no power state", f.id))
                }
                (false, Power::On | Power::Off) => {
                    out.push(format!("fixture `{}` ({}) is not powerable", f.id, f.kind.as_str()))
                }
                _ => {}
            }
        }

        for o in &self.objects {
            if self.fixture(o.at.as_str()).is_none() {
                out.push(format!("object `{}` placed in unknown fixture `{}`", o.id, o.at));
            }
        }

        if self.robots.is_empty() {
            out.push("scenario needs at least one robot".to_owned());
        }
        let mut homes = BTreeSet::new();
        for r in &self.robots {
            if self.fixture(r.home.as_str()).is_none() {
                out.push(format!("robot `{}` has unknown home station `{}`", r.id, r.home));
            } else if !homes.insert(r.home.as_str()) {
                out.push(format!("robot `{}` shares home station `{}`", r.id, r.home));
            }
        }

        for (kind, p) in self.primitive_success_prob.iter() {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("success probability for {} outside [0,1]: {p}", kind.as_str()));
            }
        }
        for (kind, d) in self.duration_table.iter() {
            if !d.is_finite() || d < 0.0 {
                out.push(format!("duration for {} must be finite and non-negative: {d}", kind.as_str()));
            }
        }
        out
    }
}
