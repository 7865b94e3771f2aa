//! Episode-level behaviour of the executor with the oracle reasoner.

use remac::bench::tasks::{instantiate_task, TaskName};
use remac::executor::{
    run_episode, world_reset_for_iteration, EpisodeConfig, EpisodeResult, EpisodeStatus, EpisodeTrace,
    IterationOutcome, Mission, PlanCause, ReflectionDb, Setting, TraceEvent,
};
use remac::reasoning::{Backend, BackendError, EchoBackend, OracleBackend, ReasonerRequest, ReasonerResponse, RequestKind};
use remac::world::{Door, SideEffect};

fn config(setting: Setting, seed: u64, p: Option<f64>) -> EpisodeConfig {
    EpisodeConfig { success_prob: p, ..EpisodeConfig::new(setting, seed) }
}

fn run_with(task: TaskName, cfg: &EpisodeConfig, backend: &mut dyn Backend) -> EpisodeResult {
    let scenario = instantiate_task(task.spec(), cfg.seed);
    let mission = Mission::for_task(task.spec(), &scenario).unwrap();
    run_episode(&scenario, &mission, cfg, backend).unwrap()
}

fn run(task: TaskName, cfg: &EpisodeConfig) -> EpisodeResult {
    run_with(task, cfg, &mut OracleBackend)
}

fn events(trace: &EpisodeTrace) -> Vec<&TraceEvent> {
    trace.iter().collect()
}

#[test]
fn checks_recover_from_the_closed_door_with_redundant_steps() {
    let r = run(TaskName::OpenMicrowavePnP, &config(Setting::Cc, 2, Some(1.0)));
    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(r.plans.len(), 1);
    // The naive plan needed two splices: put the item down, open, re-pick.
    let replans = r.trace.iter().filter(|e| matches!(e, TraceEvent::Replan { .. })).count();
    assert_eq!(replans, 2);
    assert_eq!(r.metrics.initial_plan_length, Some(11));
    assert_eq!(r.reflections.len(), 2);
    assert!(r.reflections.entries[0].cause.contains("open the microwave door"));
}

#[test]
fn blind_run_leaves_the_item_outside() {
    let r = run(TaskName::OpenMicrowavePnP, &config(Setting::Base, 2, Some(1.0)));
    assert_eq!(r.status, EpisodeStatus::BlindFailure);
    assert!(r.reason.as_deref().unwrap().contains("not in `microwave`"));
    assert!(r.reflections.is_empty());
    assert_eq!(r.metrics.simulated_time, None);
    assert!(r.trace.iter().any(|e| matches!(e, TraceEvent::PrimitiveSkipped { .. })));
    assert!(!r.trace.iter().any(|e| matches!(e, TraceEvent::PreCheck { .. } | TraceEvent::PostCheck { .. })));
}

#[test]
fn evolution_reaches_the_canonical_plans() {
    for (task, re, remac) in [
        (TaskName::OpenCabinetPnP, 6, 4),
        (TaskName::OpenMicrowavePnP, 6, 4),
        (TaskName::DefrostInBowl, 9, 7),
        (TaskName::HeatOnStove, 9, 7),
    ] {
        let a = run(task, &config(Setting::Re, 5, Some(1.0)));
        let b = run(task, &config(Setting::Remac, 5, Some(1.0)));
        assert_eq!(a.plans.len(), 2, "{task}");
        assert_eq!(a.metrics.initial_plan_length, Some(re), "{task}");
        assert_eq!(b.metrics.initial_plan_length, Some(remac), "{task}");
        // The second iteration needed no reflection at all.
        let snapshots: Vec<_> = a
            .trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::PlanSnapshot { iteration: 2, cause, .. } => Some(*cause),
                _ => None,
            })
            .collect();
        assert_eq!(snapshots, vec![PlanCause::Initial], "{task}");
    }
}

#[test]
fn one_iteration_of_re_is_cc() {
    let mut re = config(Setting::Re, 9, Some(1.0));
    re.max_iterations = 1;
    let a = run(TaskName::HeatOnStove, &re);
    let b = run(TaskName::HeatOnStove, &config(Setting::Cc, 9, Some(1.0)));
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.plans, b.plans);
}

#[test]
fn iterations_restart_from_the_initial_scene() {
    let scenario = instantiate_task(TaskName::OpenMicrowavePnP.spec(), 3);
    let fresh = world_reset_for_iteration(&scenario).unwrap();
    assert_eq!(fresh.fixtures[&remac::FixtureId::from("microwave")].door, Door::Closed);

    let r = run(TaskName::OpenMicrowavePnP, &config(Setting::Re, 3, Some(1.0)));
    let starts: Vec<(u32, usize)> = r
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::IterationStart { iteration, reflections } => Some((*iteration, *reflections)),
            _ => None,
        })
        .collect();
    // Reflections carry over; the scene does not.
    assert_eq!(starts, vec![(1, 0), (2, 2)]);
    let second_plan = &r.plans[1];
    assert!(second_plan.subtasks.iter().any(|s| s.signature() == "open(microwave)"));
}

#[test]
fn decompose_requests_carry_exactly_the_existing_reflections() {
    struct Spy {
        inner: OracleBackend,
        seen: Vec<(u32, usize, bool)>,
    }
    impl Backend for Spy {
        fn id(&self) -> &str {
            "spy"
        }
        fn call(&mut self, r: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
            if r.kind == RequestKind::Decompose && r.replan_from.is_none() {
                self.seen.push((r.iteration, r.reflections.len(), r.previous_plan.is_some()));
            }
            self.inner.call(r)
        }
    }
    let mut spy = Spy { inner: OracleBackend, seen: Vec::new() };
    let r = run_with(TaskName::DefrostInBowl, &config(Setting::Re, 1, Some(1.0)), &mut spy);
    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(spy.seen, vec![(1, 0, false), (2, r.reflections.deduped().len(), true)]);
}

#[test]
fn dropped_item_is_rechecked_and_picked_up_again() {
    // Find a seeded run where a place fails and drops the item.
    let found = (0..400).find_map(|seed| {
        let r = run(TaskName::OpenMicrowavePnP, &config(Setting::Cc, seed, Some(0.8)));
        let evs = events(&r.trace);
        let drop = evs.iter().position(|e| {
            matches!(e, TraceEvent::PrimitiveExecuted { side_effect: SideEffect::ObjectDropped { .. }, .. })
        })?;
        Some((r.clone(), drop))
    });
    let (r, drop) = found.expect("some seed drops an item");
    let evs = events(&r.trace);
    let TraceEvent::PrimitiveExecuted { subtask, iteration, .. } = evs[drop] else { unreachable!() };
    let after = &evs[drop + 1..];
    assert!(matches!(after[0], TraceEvent::PostCheck { verdict, .. } if !verdict.passed));
    assert!(matches!(after[1], TraceEvent::Retry { subtask: s, attempt: 1, .. } if s == subtask));
    assert!(matches!(after[2], TraceEvent::PreCheck { recheck: true, verdict, subtask: s, .. } if !verdict.passed && s == subtask));
    // The re-check failure replans without reflecting.
    assert!(matches!(after[3], TraceEvent::Replan { cause: PlanCause::Recovery, .. }));
    let replan_plan = after.iter().find_map(|e| match e {
        TraceEvent::PlanSnapshot { iteration: i, cause: PlanCause::Recovery, plan, .. } if i == iteration => Some(plan),
        _ => None,
    });
    assert!(replan_plan.unwrap().subtasks.iter().any(|s| s.signature().starts_with("pick(")));
}

#[test]
fn exhausted_retries_fail_the_plan() {
    let mut cfg = config(Setting::Cc, 0, Some(0.0));
    cfg.max_retries = 1;
    let r = run(TaskName::OpenCabinetPnP, &cfg);
    assert_eq!(r.status, EpisodeStatus::PlanFailure);
    let retries = r.trace.iter().filter(|e| matches!(e, TraceEvent::Retry { .. })).count();
    assert!(retries <= 1 + cfg.replan_budget as usize);
    assert_eq!(r.metrics.initial_plan_length, None);
    assert_eq!(r.status.exit_code(), 2);
}

#[test]
fn replan_budget_bounds_an_iteration() {
    let mut cfg = config(Setting::Cc, 0, Some(1.0));
    cfg.replan_budget = 1;
    let r = run(TaskName::OpenMicrowavePnP, &cfg);
    assert_eq!(r.status, EpisodeStatus::PlanFailure);
    assert!(r.reason.unwrap().contains("replan budget"));
}

#[test]
fn echo_backend_never_improves() {
    let r = run_with(TaskName::OpenCabinetPnP, &config(Setting::Re, 0, Some(1.0)), &mut EchoBackend::default());
    // Echoing the failed plan back as its own replacement never gets past the door.
    assert_eq!(r.status, EpisodeStatus::PlanFailure);
    assert!(r.reason.unwrap().contains("replan budget"));
}

#[test]
fn backend_failures_abort_with_their_own_status() {
    struct Down;
    impl Backend for Down {
        fn id(&self) -> &str {
            "down"
        }
        fn call(&mut self, _: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
    }
    let r = run_with(TaskName::HeatOnStove, &config(Setting::Remac, 0, None), &mut Down);
    assert_eq!(r.status, EpisodeStatus::BackendAbort);
    assert_eq!(r.status.exit_code(), 4);
    assert!(r.reason.unwrap().contains("connection refused"));
    assert!(matches!(r.trace.iter().last(), Some(TraceEvent::EpisodeEnd { .. })));
}

#[test]
fn continue_mode_keeps_the_end_state() {
    let mut cfg = config(Setting::Re, 4, Some(1.0));
    cfg.continue_mode = true;
    let r = run(TaskName::OpenCabinetPnP, &cfg);
    assert_eq!(r.status, EpisodeStatus::Success);
    // Iteration 2 finds the goal already met and needs no physical step.
    let ends: Vec<IterationOutcome> = r
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::IterationEnd { outcome, .. } => Some(*outcome),
            _ => None,
        })
        .collect();
    assert_eq!(ends[0], IterationOutcome::Success);
}

#[test]
fn configuration_is_validated() {
    let scenario = instantiate_task(TaskName::HeatOnStove.spec(), 0);
    let mission = Mission::for_task(TaskName::HeatOnStove.spec(), &scenario).unwrap();
    for bad in [
        EpisodeConfig { robot_count: 1, ..EpisodeConfig::new(Setting::Remac, 0) },
        EpisodeConfig { robot_count: 2, ..EpisodeConfig::new(Setting::Re, 0) },
        EpisodeConfig { max_iterations: 0, ..EpisodeConfig::new(Setting::Re, 0) },
        EpisodeConfig { success_prob: Some(1.5), ..EpisodeConfig::new(Setting::Cc, 0) },
    ] {
        assert!(run_episode(&scenario, &mission, &bad, &mut OracleBackend).is_err());
    }
}

#[test]
fn traces_and_reflections_round_trip_through_files() {
    let r = run(TaskName::DefrostInBowl, &config(Setting::Remac, 8, Some(0.9)));
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("trace.jsonl");
    let db_path = dir.path().join("reflections.json");
    r.trace.write(&trace_path).unwrap();
    r.reflections.save(&db_path).unwrap();
    assert_eq!(EpisodeTrace::read(&trace_path).unwrap(), r.trace);
    assert_eq!(ReflectionDb::load(&db_path).unwrap(), r.reflections);
}
