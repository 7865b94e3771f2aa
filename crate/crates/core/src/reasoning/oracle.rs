//! Deterministic scripted reasoner.

use crate::bench::tasks::task_for_instruction;
use crate::perception::Vocabulary;
use crate::plan::Subtask;
use crate::verdict::Verdict;
use crate::world::PrimitiveKind;

use super::checks::{postcheck_observation, precheck_observation};
use super::planner::{self, DecomposeInput};
use super::{Backend, BackendError, ReasonerRequest, ReasonerResponse, RequestKind};

/// Grounds checks in the observation exactly, decomposes with the naive
/// blindspot until reflections teach it otherwise, and reflects from a
/// fixed template table.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend;

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn call(&mut self, req: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        req.validate()?;
        match req.kind {
            RequestKind::ProposeItems => Ok(ReasonerResponse::Items { items: proposal_for(&req.instruction) }),
            RequestKind::Decompose => {
                let task = task_for_instruction(&req.instruction).ok_or_else(|| {
                    BackendError::Unsupported(format!("no decomposition known for `{}`", req.instruction))
                })?;
                let registry = req.registry_snapshot.as_ref().expect("validated");
                let plan = planner::decompose(DecomposeInput {
                    task,
                    registry,
                    observation: req.observation.as_ref(),
                    reflections: &req.reflections,
                    robot_count: req.robot_count.unwrap_or(1),
                    replan_from: req.replan_from.as_ref(),
                    previous_plan: req.previous_plan.as_ref(),
                    iteration: req.iteration,
                })
                .ok_or_else(|| BackendError::Unsupported("required items were never discovered".to_owned()))?;
                Ok(ReasonerResponse::Plan { plan })
            }
            RequestKind::PreCheck => {
                let verdict = precheck_observation(req.subtask.as_ref().expect("validated"), req.observation.as_ref().expect("validated"));
                Ok(ReasonerResponse::Verdict { verdict })
            }
            RequestKind::PostCheck => {
                let subtask = req.subtask.as_ref().expect("validated");
                let verdict = postcheck_observation(&subtask.goal_predicate, req.observation.as_ref().expect("validated"));
                Ok(ReasonerResponse::Verdict { verdict })
            }
            RequestKind::Reflect => {
                let verdict = req.verdict.as_ref().expect("validated");
                Ok(ReasonerResponse::Reflection { cause: reflect_cause(req.subtask.as_ref().expect("validated"), verdict) })
            }
        }
    }
}

/// Names the violated constraint and the ordering that avoids it.
fn reflect_cause(subtask: &Subtask, verdict: &Verdict) -> String {
    let reason = verdict.reason.as_str();
    let fixture = subtask
        .primitive()
        .and_then(|p| p.fixture().map(|f| f.to_string()))
        .unwrap_or_else(|| "target".to_owned());
    let placing = matches!(subtask.verb, PrimitiveKind::Place | PrimitiveKind::PlaceAndStart);
    if placing && reason.contains("door is closed") {
        format!("open the {fixture} door before any place into it")
    } else if reason.contains("gripper occupied") && matches!(subtask.verb, PrimitiveKind::Open | PrimitiveKind::Close) {
        "free the gripper before opening doors".to_owned()
    } else if reason.contains("no container") {
        format!("place a container (bowl or pan) in the {fixture} before placing food into it")
    } else {
        format!("`{}` was infeasible: {reason}", subtask.signature())
    }
}

/// Fixed lookup from instruction wording to the items worth looking for:
/// target fixtures first, then required vessels, then the items themselves.
pub fn proposal_for(instruction: &str) -> Vec<String> {
    let text = format!(" {} ", instruction.to_lowercase().replace(|c: char| !c.is_alphanumeric(), " "));
    let has = |w: &str| text.contains(&format!(" {w} "));
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        if !out.iter().any(|x| x == s) {
            out.push(s.to_owned());
        }
    };

    let fixtures = ["cabinet", "microwave", "stove", "sink", "fridge", "dishwasher"];
    let named: Vec<&str> = fixtures.iter().copied().filter(|f| has(f)).collect();
    for f in &named {
        push(f);
    }
    if named.is_empty() {
        if has("heat") || has("warm") || has("cook") {
            push("microwave or stove");
        }
        if has("defrost") || has("thaw") || has("wash") {
            push("sink");
        }
    }
    if has("defrost") || has("thaw") {
        push("bowl");
    }
    if named.contains(&"stove") || has("fry") {
        push("pan");
    }

    let vocab = Vocabulary::bundled();
    let mut terms: Vec<String> = Vec::new();
    for (class, members) in vocab.classes() {
        terms.push(class.clone());
        terms.extend(members.iter().cloned());
    }
    terms.extend(["groceries", "veggies", "frozen food", "seafood", "fruits", "vegetables"].map(String::from));
    // Longest phrases first so "frozen food" wins over "food".
    terms.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut consumed = text.clone();
    for term in terms {
        let needle = format!(" {term} ");
        let plural = format!(" {term}s ");
        if !(consumed.contains(&needle) || consumed.contains(&plural)) {
            continue;
        }
        consumed = consumed.replace(&needle, " ").replace(&plural, " ");
        if ["bowl", "pan"].contains(&term.as_str()) || fixtures.contains(&term.as_str()) {
            continue;
        }
        push(&canonical_term(vocab, &term));
    }
    out
}

fn canonical_term(vocab: &Vocabulary, term: &str) -> String {
    match term {
        "groceries" => "grocery".to_owned(),
        "veggies" | "vegetables" => "vegetable".to_owned(),
        "fruits" => "fruit".to_owned(),
        other if vocab.class_members(other).is_some() => other.to_owned(),
        other => other.to_owned(),
    }
}
