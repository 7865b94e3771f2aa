//! Condition checks evaluated purely over what a robot observes.
//!
//! These never look at the world state; they re-derive feasibility from the
//! station-local observation and the team roster, so comparing them against
//! the world's own precondition test is a meaningful cross-check.

use crate::ids::{FixtureId, ObjectId};
use crate::perception::Observation;
use crate::plan::Subtask;
use crate::predicate::{door_word, power_word, thermal_word, Predicate};
use crate::verdict::Verdict;
use crate::world::{Door, Location, Power, Primitive, PrimitiveKind};

/// Feasibility of a subtask for the observing robot.
pub fn precheck_observation(subtask: &Subtask, obs: &Observation) -> Verdict {
    let Some(p) = subtask.primitive() else {
        return Verdict::fail(format!("malformed subtask `{}`", subtask.signature()));
    };
    if p.robot() != &obs.robot {
        return Verdict::fail(format!("observation is from `{}`, subtask belongs to `{}`", obs.robot, p.robot()));
    }
    match &p {
        Primitive::Navigate { fixture, .. } => match obs.teammate_at(fixture) {
            Some(other) => Verdict::fail(format!("station `{fixture}` occupied by `{}`", other.id)),
            None => Verdict::pass(),
        },
        Primitive::Pick { object, .. } => {
            if obs.holding.is_some() {
                return Verdict::fail("gripper occupied");
            }
            if let Some(other) = obs.team.iter().find(|r| r.holding.as_ref() == Some(object)) {
                return Verdict::fail(format!("`{object}` is held by `{}`", other.id));
            }
            if obs.resting_station(object) != Some(&obs.station) {
                return Verdict::fail(format!("`{object}` not visible at `{}`", obs.station));
            }
            if enclosing_door_closed(obs, object) {
                return Verdict::fail(format!("`{object}` unreachable: `{}` door is closed", obs.station));
            }
            Verdict::pass()
        }
        Primitive::Place { object, fixture, .. } | Primitive::PlaceAndStart { object, fixture, .. } => {
            if &obs.station != fixture {
                return Verdict::fail(format!("robot not at `{fixture}`"));
            }
            if obs.holding.as_ref() != Some(object) {
                return Verdict::fail(format!("not holding `{object}`"));
            }
            let Some(target) = obs.fixture(fixture) else {
                return Verdict::fail(format!("`{fixture}` not visible"));
            };
            if target.door == Door::Closed {
                return Verdict::fail(format!("`{fixture}` door is closed"));
            }
            let is_vessel = obs.object(object).is_some_and(|o| o.receptacle);
            if target.kind.requires_receptacle() && !is_vessel && container_at(obs, fixture).is_none() {
                return Verdict::fail(format!("no container (bowl or pan) at `{fixture}`"));
            }
            if p.kind() == PrimitiveKind::PlaceAndStart && target.powered == Power::Absent {
                return Verdict::fail(format!("`{fixture}` cannot be started"));
            }
            Verdict::pass()
        }
        Primitive::Open { fixture, .. } | Primitive::Close { fixture, .. } => {
            if &obs.station != fixture {
                return Verdict::fail(format!("robot not at `{fixture}`"));
            }
            let Some(target) = obs.fixture(fixture) else {
                return Verdict::fail(format!("`{fixture}` not visible"));
            };
            let opening = p.kind() == PrimitiveKind::Open;
            match (target.door, opening) {
                (Door::Absent, _) => return Verdict::fail(format!("`{fixture}` has no door")),
                (Door::Open, true) => return Verdict::fail(format!("`{fixture}` door is already open")),
                (Door::Closed, false) => return Verdict::fail(format!("`{fixture}` door is already closed")),
                _ => {}
            }
            if obs.holding.is_some() {
                return Verdict::fail("gripper occupied");
            }
            Verdict::pass()
        }
        Primitive::TurnOn { fixture, .. } | Primitive::TurnOff { fixture, .. } => {
            if &obs.station != fixture {
                return Verdict::fail(format!("robot not at `{fixture}`"));
            }
            let Some(target) = obs.fixture(fixture) else {
                return Verdict::fail(format!("`{fixture}` not visible"));
            };
            if target.powered == Power::Absent {
                return Verdict::fail(format!("`{fixture}` has no power switch"));
            }
            if target.door == Door::Open {
                return Verdict::fail(format!("`{fixture}` door is open"));
            }
            Verdict::pass()
        }
    }
}

fn container_at<'a>(obs: &'a Observation, fixture: &FixtureId) -> Option<&'a ObjectId> {
    obs.visible_objects
        .iter()
        .find(|o| o.receptacle && o.containment == Location::Fixture(fixture.clone()))
        .map(|o| &o.id)
}

fn enclosing_door_closed(obs: &Observation, object: &ObjectId) -> bool {
    obs.root_fixture(object)
        .and_then(|f| obs.fixture(f))
        .is_some_and(|f| f.door == Door::Closed)
}

/// Whether a goal predicate holds in the observation. Anything the
/// observation does not show counts as unmet.
pub fn postcheck_observation(goal: &Predicate, obs: &Observation) -> Verdict {
    match unmet(goal, obs) {
        None => Verdict::pass(),
        Some(reason) => Verdict::fail(reason),
    }
}

fn unmet(goal: &Predicate, obs: &Observation) -> Option<String> {
    match goal {
        Predicate::All { of } => of.iter().find_map(|p| unmet(p, obs)),
        Predicate::RobotAt { robot, fixture } => match obs.team.iter().find(|r| &r.id == robot) {
            Some(r) if &r.station == fixture => None,
            _ => Some(format!("robot `{robot}` not at `{fixture}`")),
        },
        Predicate::Holding { robot, object } => match obs.team.iter().find(|r| &r.id == robot) {
            Some(r) if r.holding.as_ref() == Some(object) => None,
            _ => Some(format!("robot `{robot}` not holding `{object}`")),
        },
        Predicate::ObjectIn { object, fixture, contained } => {
            if obs.root_fixture(object) != Some(fixture) {
                return Some(format!("object not in target: `{object}` not seen in `{fixture}`"));
            }
            if *contained {
                let in_vessel = match obs.object(object).map(|o| &o.containment) {
                    Some(Location::Object(parent)) => obs
                        .object(parent)
                        .is_some_and(|p| p.receptacle && p.containment == Location::Fixture(fixture.clone())),
                    _ => false,
                };
                if !in_vessel {
                    return Some(format!("`{object}` not in a container at `{fixture}`"));
                }
            }
            None
        }
        Predicate::Door { fixture, state } => match obs.fixture(fixture) {
            Some(f) if f.door == *state => None,
            Some(_) => Some(format!("`{fixture}` door not {}", door_word(*state))),
            None => Some(format!("`{fixture}` not visible")),
        },
        Predicate::Power { fixture, state } => match obs.fixture(fixture) {
            Some(f) if f.powered == *state => None,
            Some(_) => Some(format!("`{fixture}` not {}", power_word(*state))),
            None => Some(format!("`{fixture}` not visible")),
        },
        Predicate::Thermal { object, state } => match obs.object(object) {
            Some(o) if o.thermal == *state => None,
            Some(_) => Some(format!("`{object}` not {}", thermal_word(*state))),
            None => Some(format!("`{object}` not visible")),
        },
    }
}

#[cfg(test)]
mod tests {
    use rand::rngs::mock::StepRng;

    use super::*;
    use crate::perception::{observe, Contents};
    use crate::world::{load_scenario, Scenario, WorldState};

    fn world() -> WorldState {
        let s: Scenario = serde_json::from_value(serde_json::json!({
            "layout_id": "t",
            "style_id": "s",
            "fixtures": [
                {"id": "counter", "kind": "counter"},
                {"id": "microwave", "kind": "microwave", "door": "closed", "powered": "off"},
                {"id": "dock_a", "kind": "dock"},
                {"id": "dock_b", "kind": "dock"}
            ],
            "objects": [{"id": "carrot", "category": "carrot", "at": "counter"}],
            "robots": [{"id": "A", "home": "dock_a"}, {"id": "B", "home": "dock_b"}]
        }))
        .unwrap();
        load_scenario(&s).unwrap()
    }

    fn step(w: &mut WorldState, p: Primitive) {
        w.apply(&p, &mut StepRng::new(0, 0)).unwrap();
    }

    fn sub(p: &Primitive) -> Subtask {
        Subtask::from_primitive("t1", p, false)
    }

    #[test]
    fn place_into_closed_microwave_fails() {
        let mut w = world();
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "counter".into() });
        step(&mut w, Primitive::Pick { robot: "A".into(), object: "carrot".into() });
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "microwave".into() });
        let pas = Primitive::PlaceAndStart { robot: "A".into(), object: "carrot".into(), fixture: "microwave".into() };
        let v = precheck_observation(&sub(&pas), &observe(&w, &"A".into()).unwrap());
        assert_eq!(v, Verdict::fail("`microwave` door is closed"));
        let open = Primitive::Open { robot: "A".into(), fixture: "microwave".into() };
        assert_eq!(precheck_observation(&sub(&open), &observe(&w, &"A".into()).unwrap()), Verdict::fail("gripper occupied"));
    }

    #[test]
    fn pick_visible_carrot_passes() {
        let mut w = world();
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "counter".into() });
        let pick = Primitive::Pick { robot: "A".into(), object: "carrot".into() };
        assert!(precheck_observation(&sub(&pick), &observe(&w, &"A".into()).unwrap()).passed);
    }

    #[test]
    fn navigate_sees_teammate() {
        let w = world();
        let nav = Primitive::Navigate { robot: "A".into(), fixture: "dock_b".into() };
        assert!(!precheck_observation(&sub(&nav), &observe(&w, &"A".into()).unwrap()).passed);
    }

    #[test]
    fn postcheck_through_microwave_window() {
        let mut w = world();
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "microwave".into() });
        step(&mut w, Primitive::Open { robot: "A".into(), fixture: "microwave".into() });
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "counter".into() });
        step(&mut w, Primitive::Pick { robot: "A".into(), object: "carrot".into() });
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "microwave".into() });
        let pas = Primitive::PlaceAndStart { robot: "A".into(), object: "carrot".into(), fixture: "microwave".into() };
        step(&mut w, pas.clone());
        let obs = observe(&w, &"A".into()).unwrap();
        assert!(obs.visible_fixtures.iter().all(|f| f.contents == Contents::Visible));
        assert!(postcheck_observation(&Predicate::achieved_by(&pas, false), &obs).passed);
    }

    #[test]
    fn dropped_object_fails_postcheck() {
        let mut w = world();
        step(&mut w, Primitive::Navigate { robot: "A".into(), fixture: "counter".into() });
        step(&mut w, Primitive::Pick { robot: "A".into(), object: "carrot".into() });
        let place = Primitive::Place { robot: "A".into(), object: "carrot".into(), fixture: "counter".into() };
        let goal = Predicate::ObjectIn { object: "carrot".into(), fixture: "microwave".into(), contained: false };
        w.apply(&place, &mut StepRng::new(u64::MAX, 0)).unwrap();
        let v = postcheck_observation(&goal, &observe(&w, &"A".into()).unwrap());
        assert!(v.reason.starts_with("object not in target"));
    }
}
