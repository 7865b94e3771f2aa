//! Episode event log and the metrics derived from it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ids::{FixtureId, RobotId, SubtaskId};
use crate::plan::{Plan, SubtaskStatus};
use crate::verdict::Verdict;
use crate::world::SideEffect;

use super::{EpisodeStatus, Setting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanCause {
    Initial,
    /// Replacement suffix after a failed pre-check (with reflection).
    Reflective,
    /// Replacement suffix after a failed re-check (no reflection).
    Recovery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationOutcome {
    Success,
    PlanFailure,
    BlindFailure,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    EpisodeStart {
        instruction: String,
        setting: Setting,
        seed: u64,
        robot_count: usize,
        max_retries: u32,
        max_iterations: u32,
        replan_budget: u32,
    },
    Proposal {
        items: Vec<String>,
    },
    ExplorationVisit {
        step: usize,
        robot: RobotId,
        station: FixtureId,
        registry_size: usize,
    },
    ExplorationEnd {
        elapsed: f64,
        stopped_early: bool,
        registry_size: usize,
    },
    IterationStart {
        iteration: u32,
        reflections: usize,
    },
    PlanSnapshot {
        iteration: u32,
        cause: PlanCause,
        length: usize,
        plan: Plan,
    },
    PreCheck {
        iteration: u32,
        subtask: SubtaskId,
        robot: RobotId,
        attempt: u32,
        recheck: bool,
        verdict: Verdict,
    },
    PrimitiveExecuted {
        iteration: u32,
        subtask: SubtaskId,
        primitive: String,
        succeeded: bool,
        side_effect: SideEffect,
        elapsed: f64,
    },
    PrimitiveSkipped {
        iteration: u32,
        subtask: SubtaskId,
        primitive: String,
        reason: String,
    },
    PostCheck {
        iteration: u32,
        subtask: SubtaskId,
        attempt: u32,
        verdict: Verdict,
    },
    Retry {
        iteration: u32,
        subtask: SubtaskId,
        attempt: u32,
    },
    ReflectionAdded {
        iteration: u32,
        subtask: SubtaskId,
        cause: String,
        db_size: usize,
    },
    Replan {
        iteration: u32,
        failed: SubtaskId,
        cause: PlanCause,
        suffix_len: usize,
        budget_left: u32,
    },
    SubtaskFinished {
        iteration: u32,
        subtask: SubtaskId,
        status: SubtaskStatus,
    },
    LayerEnd {
        iteration: u32,
        subtasks: Vec<SubtaskId>,
        duration: f64,
    },
    IterationEnd {
        iteration: u32,
        outcome: IterationOutcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        done: usize,
        total: usize,
        initial_length: usize,
        executed_length: usize,
        new_reflections: usize,
    },
    EpisodeEnd {
        status: EpisodeStatus,
        metrics: EpisodeMetrics,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: usize,
    /// Simulated seconds when the event was logged.
    pub clock: f64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub events: Vec<TraceRecord>,
}

impl EpisodeTrace {
    /// Appends an event and returns its sequence number.
    pub fn push(&mut self, clock: f64, event: TraceEvent) -> usize {
        let seq = self.events.len();
        self.events.push(TraceRecord { seq, clock, event });
        seq
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.events {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(EpisodeTrace { events })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(Self::from_jsonl(&std::fs::read_to_string(path)?)?)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().map(|r| &r.event)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub task_success: bool,
    pub subtask_completion_rate: f64,
    /// Layer count of the plan the evaluated iteration actually executed.
    pub initial_plan_length: Option<usize>,
    /// Exploration plus execution makespan, in simulated seconds.
    pub simulated_time: Option<f64>,
}

/// Derives episode metrics from the trace alone.
///
/// The evaluated iteration is the last successful one, or the last one run
/// if none succeeded. Length and time are reported for successes only.
pub fn compute_metrics(trace: &EpisodeTrace) -> EpisodeMetrics {
    let ends: Vec<(&TraceRecord, IterationOutcome, usize, usize, usize)> = trace
        .events
        .iter()
        .filter_map(|r| match &r.event {
            TraceEvent::IterationEnd { outcome, done, total, executed_length, .. } => {
                Some((r, *outcome, *done, *total, *executed_length))
            }
            _ => None,
        })
        .collect();
    let evaluated =
        ends.iter().rev().find(|e| e.1 == IterationOutcome::Success).or_else(|| ends.last());
    match evaluated {
        None => EpisodeMetrics {
            task_success: false,
            subtask_completion_rate: 0.0,
            initial_plan_length: None,
            simulated_time: None,
        },
        Some(&(record, outcome, done, total, length)) => {
            let success = outcome == IterationOutcome::Success;
            EpisodeMetrics {
                task_success: success,
                subtask_completion_rate: if total == 0 { 0.0 } else { done as f64 / total as f64 },
                initial_plan_length: success.then_some(length),
                simulated_time: success.then_some(record.clock),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn end(outcome: IterationOutcome, done: usize, total: usize) -> TraceEvent {
        TraceEvent::IterationEnd {
            iteration: 1,
            outcome,
            reason: None,
            done,
            total,
            initial_length: total,
            executed_length: total,
            new_reflections: 0,
        }
    }

    #[test]
    fn failure_has_no_length_or_time() {
        let mut t = EpisodeTrace::default();
        t.push(12.0, end(IterationOutcome::PlanFailure, 4, 6));
        let m = compute_metrics(&t);
        assert!(!m.task_success);
        assert!((m.subtask_completion_rate - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.initial_plan_length, None);
        assert_eq!(m.simulated_time, None);
    }

    #[test]
    fn last_success_is_evaluated() {
        let mut t = EpisodeTrace::default();
        t.push(20.0, end(IterationOutcome::Success, 11, 11));
        t.push(30.0, end(IterationOutcome::Success, 6, 6));
        let m = compute_metrics(&t);
        assert_eq!(m.initial_plan_length, Some(6));
        assert_eq!(m.simulated_time, Some(30.0));
        assert_eq!(m.subtask_completion_rate, 1.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = EpisodeTrace::default();
        t.push(0.0, TraceEvent::Proposal { items: vec!["sink".into()] });
        t.push(1.0, end(IterationOutcome::BlindFailure, 3, 4));
        assert_eq!(EpisodeTrace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }
}
