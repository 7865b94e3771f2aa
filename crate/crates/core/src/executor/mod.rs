//! The reflect-and-evolve executor.
//!
//! One episode explores the kitchen, then runs up to `max_iterations`
//! iterations. Each iteration starts from the initial scene, asks the
//! reasoner for a plan (handing it every reflection gathered so far and the
//! previous plan) and executes it layer by layer. With checks enabled each
//! subtask goes through pre-check, execution and post-check; a failed first
//! pre-check produces a reflection and a replanned suffix, a failed
//! post-check triggers a fresh pre-check and a retry.

mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::tasks::{RoleError, TaskSpec};
use crate::ids::{FixtureId, RobotId, SubtaskId};
use crate::perception::{explore, observe, ItemRegistry};
use crate::plan::{self, Plan, SpliceError, SubtaskStatus};
use crate::predicate::Predicate;
use crate::reasoning::{Backend, BackendError, Gateway, ReasonerRequest, Reflection};
use crate::world::{load_scenario, FixtureKind, PerPrimitive, Primitive, Scenario, ScenarioError, WorldState};

pub use trace::{
    compute_metrics, EpisodeMetrics, EpisodeTrace, IterationOutcome, PlanCause, TraceEvent, TraceRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "BASE")]
    Base,
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "RE")]
    Re,
    #[serde(rename = "REMAC")]
    Remac,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Base, Setting::Cc, Setting::Re, Setting::Remac];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Base => "BASE",
            Setting::Cc => "CC",
            Setting::Re => "RE",
            Setting::Remac => "REMAC",
        }
    }

    pub fn checks(self) -> bool {
        self != Setting::Base
    }

    pub fn evolution(self) -> bool {
        matches!(self, Setting::Re | Setting::Remac)
    }

    pub fn default_robot_count(self) -> usize {
        if self == Setting::Remac {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown setting `{s}` (expected BASE, CC, RE or REMAC)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub setting: Setting,
    pub max_retries: u32,
    pub max_iterations: u32,
    /// Replans allowed per iteration.
    pub replan_budget: u32,
    pub robot_count: usize,
    pub seed: u64,
    /// Overrides the scenario's manipulation success probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_prob: Option<f64>,
    /// Start each iteration where the previous one ended instead of resetting.
    #[serde(default)]
    pub continue_mode: bool,
}

impl EpisodeConfig {
    pub fn new(setting: Setting, seed: u64) -> Self {
        EpisodeConfig {
            setting,
            max_retries: 2,
            max_iterations: 3,
            replan_budget: 5,
            robot_count: setting.default_robot_count(),
            seed,
            success_prob: None,
            continue_mode: false,
        }
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        let bad = |m: String| Err(EpisodeError::Config(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        match self.setting {
            Setting::Remac if self.robot_count < 2 => bad("REMAC needs at least two robots".into()),
            Setting::Base | Setting::Cc | Setting::Re if self.robot_count != 1 => {
                bad(format!("{} runs a single robot", self.setting))
            }
            _ => match self.success_prob {
                Some(p) if !(0.0..=1.0).contains(&p) => bad(format!("success probability {p} outside [0, 1]")),
                _ => Ok(()),
            },
        }
    }

    /// Iterations actually available under this setting.
    pub fn iteration_cap(&self) -> u32 {
        if self.setting.evolution() {
            self.max_iterations
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    PlanFailure,
    BlindFailure,
    BackendAbort,
}

impl EpisodeStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            EpisodeStatus::Success => 0,
            EpisodeStatus::PlanFailure => 2,
            EpisodeStatus::BlindFailure => 3,
            EpisodeStatus::BackendAbort => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Task(#[from] RoleError),
}

/// Reflections gathered during one episode. Append-only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflectionDb {
    pub entries: Vec<Reflection>,
}

impl ReflectionDb {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, r: Reflection) {
        self.entries.push(r);
    }

    /// Entries with a distinct (subtask signature, cause) pair, first occurrence kept.
    pub fn deduped(&self) -> Vec<Reflection> {
        let mut seen = std::collections::BTreeSet::new();
        self.entries
            .iter()
            .filter(|r| seen.insert((r.subtask.signature(), r.cause.clone())))
            .cloned()
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reflections serialize")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// What the episode is trying to achieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub instruction: String,
    pub goal: Predicate,
}

impl Mission {
    pub fn for_task(task: &TaskSpec, scenario: &Scenario) -> Result<Self, EpisodeError> {
        let world = load_scenario(scenario)?;
        let roles = task.resolve_roles(&world)?;
        Ok(Mission { instruction: task.instruction.clone(), goal: task.goal(&roles) })
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub metrics: EpisodeMetrics,
    pub trace: EpisodeTrace,
    pub reflections: ReflectionDb,
    /// The plan each iteration ended up executing, splices included.
    pub plans: Vec<Plan>,
    /// Registry as exploration left it; every reset iteration starts from this.
    pub explored: ItemRegistry,
    /// Registry as the last iteration left it.
    pub registry: ItemRegistry,
    pub reason: Option<String>,
}

/// The scenario as the episode will run it: team size and success
/// probabilities adjusted to the configuration.
pub fn effective_scenario(scenario: &Scenario, config: &EpisodeConfig) -> Scenario {
    let mut s = scenario.clone().with_robot_count(config.robot_count);
    if let Some(p) = config.success_prob {
        s.primitive_success_prob = PerPrimitive::manipulation_success(p);
    }
    s
}

/// Fresh initial state for a new iteration; reflections and registry live elsewhere.
pub fn world_reset_for_iteration(scenario: &Scenario) -> Result<WorldState, ScenarioError> {
    load_scenario(scenario)
}

/// Stations visited during exploration, in scenario order; docks are skipped.
pub fn exploration_stations(scenario: &Scenario) -> Vec<FixtureId> {
    scenario.fixtures.iter().filter(|f| f.kind != FixtureKind::Dock).map(|f| f.id.clone()).collect()
}

pub fn run_episode(
    scenario: &Scenario,
    mission: &Mission,
    config: &EpisodeConfig,
    backend: &mut dyn Backend,
) -> Result<EpisodeResult, EpisodeError> {
    config.validate()?;
    let scenario = effective_scenario(scenario, config);
    let initial = load_scenario(&scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = EpisodeTrace::default();
    let mut gateway = Gateway::new(backend);
    trace.push(
        0.0,
        TraceEvent::EpisodeStart {
            instruction: mission.instruction.clone(),
            setting: config.setting,
            seed: config.seed,
            robot_count: config.robot_count,
            max_retries: config.max_retries,
            max_iterations: config.max_iterations,
            replan_budget: config.replan_budget,
        },
    );

    let items = match gateway.propose_items(&mission.instruction) {
        Ok(items) => items,
        Err(e) => {
            let metrics = compute_metrics(&trace);
            let reason = Some(e.to_string());
            trace.push(
                0.0,
                TraceEvent::EpisodeEnd { status: EpisodeStatus::BackendAbort, metrics: metrics.clone(), reason: reason.clone() },
            );
            return Ok(EpisodeResult {
                status: EpisodeStatus::BackendAbort,
                metrics,
                trace,
                reflections: ReflectionDb::default(),
                plans: Vec::new(),
                explored: ItemRegistry::default(),
                registry: ItemRegistry::default(),
                reason,
            });
        }
    };
    trace.push(0.0, TraceEvent::Proposal { items: items.clone() });

    let robots = scenario.robot_ids();
    let report = explore(&initial, &exploration_stations(&scenario), &robots, &items, ItemRegistry::default());
    for v in &report.visits {
        trace.push(
            v.clock,
            TraceEvent::ExplorationVisit {
                step: v.step,
                robot: v.robot.clone(),
                station: v.station.clone(),
                registry_size: v.registry_size,
            },
        );
    }
    trace.push(
        report.elapsed,
        TraceEvent::ExplorationEnd {
            elapsed: report.elapsed,
            stopped_early: report.stopped_early,
            registry_size: report.registry.len(),
        },
    );

    let explored = report.registry;
    let mut db = ReflectionDb::default();
    let mut plans: Vec<Plan> = Vec::new();
    let mut carried: Option<(WorldState, ItemRegistry)> = None;
    let mut outcomes = Vec::new();
    let mut reason = None;
    let mut registry = explored.clone();

    for iteration in 1..=config.iteration_cap() {
        let (mut world, live) = match carried.take() {
            Some(state) if config.continue_mode => state,
            _ => {
                let mut w = world_reset_for_iteration(&scenario)?;
                w.clock = report.elapsed;
                (w, explored.clone())
            }
        };
        registry = live;
        trace.push(world.clock, TraceEvent::IterationStart { iteration, reflections: db.len() });
        let mut it = Iteration {
            scenario: &scenario,
            mission,
            config,
            gateway: &mut gateway,
            trace: &mut trace,
            db: &mut db,
            registry: &mut registry,
            world: &mut world,
            rng: &mut rng,
            iteration,
            budget: config.replan_budget,
            new_reflections: 0,
        };
        let previous = plans.last().cloned();
        let result = it.run(previous);
        let new_reflections = it.new_reflections;
        plans.push(result.plan.clone());
        trace.push(
            world.clock,
            TraceEvent::IterationEnd {
                iteration,
                outcome: result.outcome,
                reason: result.reason.clone(),
                done: result.plan.done_count(),
                total: result.plan.subtasks.len(),
                initial_length: result.initial_length,
                executed_length: plan::plan_length(&result.plan),
                new_reflections,
            },
        );
        outcomes.push(result.outcome);
        reason = result.reason;
        if result.outcome == IterationOutcome::Aborted {
            break;
        }
        if result.outcome == IterationOutcome::Success && new_reflections == 0 {
            break;
        }
        carried = Some((world, registry.clone()));
    }

    let status = if outcomes.contains(&IterationOutcome::Success) {
        reason = None;
        EpisodeStatus::Success
    } else {
        match outcomes.last() {
            Some(IterationOutcome::Aborted) => EpisodeStatus::BackendAbort,
            Some(IterationOutcome::BlindFailure) => EpisodeStatus::BlindFailure,
            _ => EpisodeStatus::PlanFailure,
        }
    };
    let metrics = compute_metrics(&trace);
    let clock = trace.events.last().map_or(0.0, |r| r.clock);
    trace.push(clock, TraceEvent::EpisodeEnd { status, metrics: metrics.clone(), reason: reason.clone() });
    Ok(EpisodeResult { status, metrics, trace, reflections: db, plans, explored, registry, reason })
}

struct IterationResult {
    outcome: IterationOutcome,
    reason: Option<String>,
    plan: Plan,
    initial_length: usize,
}

enum Step {
    Done,
    /// The plan was spliced; restart layer selection.
    Replanned,
    Failed(IterationOutcome, String),
}

struct Iteration<'a, 'g> {
    scenario: &'a Scenario,
    mission: &'a Mission,
    config: &'a EpisodeConfig,
    gateway: &'a mut Gateway<'g>,
    trace: &'a mut EpisodeTrace,
    db: &'a mut ReflectionDb,
    registry: &'a mut ItemRegistry,
    world: &'a mut WorldState,
    rng: &'a mut ChaCha8Rng,
    iteration: u32,
    budget: u32,
    new_reflections: usize,
}

pub(crate) fn classify_error(e: &BackendError) -> IterationOutcome {
    match e {
        BackendError::Parse { .. } | BackendError::Unsupported(_) => IterationOutcome::PlanFailure,
        _ => IterationOutcome::Aborted,
    }
}

impl Iteration<'_, '_> {
    fn observe(&mut self, robot: &RobotId) -> crate::perception::Observation {
        let obs = observe(self.world, robot).expect("plan robots are validated");
        self.registry.merge(&obs);
        obs
    }

    fn run(&mut self, previous: Option<Plan>) -> IterationResult {
        let lead = self.scenario.robots[0].id.clone();
        let obs = self.observe(&lead);
        let request = ReasonerRequest::decompose(
            &self.mission.instruction,
            self.iteration,
            self.registry,
            obs,
            self.db.deduped(),
            previous,
            self.config.robot_count,
            None,
        );
        let mut plan = match self.gateway.decompose(&request) {
            Ok(p) => p,
            Err(e) => {
                return IterationResult {
                    outcome: classify_error(&e),
                    reason: Some(e.to_string()),
                    plan: Plan::new(self.iteration, Vec::new()),
                    initial_length: 0,
                }
            }
        };
        plan.iteration = self.iteration;
        plan.reset_statuses();
        let initial_length = plan::plan_length(&plan);
        self.trace.push(
            self.world.clock,
            TraceEvent::PlanSnapshot {
                iteration: self.iteration,
                cause: PlanCause::Initial,
                length: initial_length,
                plan: plan.clone(),
            },
        );
        let violations = plan::validate(&plan, self.scenario);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return IterationResult {
                outcome: IterationOutcome::PlanFailure,
                reason: Some(format!("invalid plan: {}", text.join("; "))),
                plan,
                initial_length,
            };
        }

        let failure = self.execute(&mut plan);
        let (outcome, reason) = match failure {
            Some((o, r)) => (o, Some(r)),
            None if self.mission.goal.holds(self.world) => (IterationOutcome::Success, None),
            None => {
                let why = self.mission.goal.unmet(self.world).unwrap_or_default();
                if self.config.setting.checks() {
                    (IterationOutcome::PlanFailure, Some(format!("plan finished without reaching the goal: {why}")))
                } else {
                    (IterationOutcome::BlindFailure, Some(format!("goal unmet at the end: {why}")))
                }
            }
        };
        IterationResult { outcome, reason, plan, initial_length }
    }

    /// Runs ready layers until nothing is left. Returns the failure, if any.
    fn execute(&mut self, plan: &mut Plan) -> Option<(IterationOutcome, String)> {
        loop {
            let ready = ready_layer(plan);
            if ready.is_empty() {
                return None;
            }
            let mut pending = ready.clone();
            let mut elapsed: BTreeMap<RobotId, f64> = BTreeMap::new();
            let mut replanned = false;
            let mut failure = None;
            while !pending.is_empty() {
                let id = pending.remove(next_in_layer(self.world, plan, &pending));
                let step = if self.config.setting.checks() {
                    self.run_checked(plan, &id, &mut elapsed)
                } else {
                    self.run_blind(plan, &id, &mut elapsed)
                };
                match step {
                    Step::Done => {}
                    Step::Replanned => {
                        replanned = true;
                        break;
                    }
                    Step::Failed(o, r) => {
                        failure = Some((o, r));
                        break;
                    }
                }
            }
            let duration = elapsed.values().copied().fold(0.0, f64::max);
            self.world.advance_clock(duration);
            self.trace.push(
                self.world.clock,
                TraceEvent::LayerEnd { iteration: self.iteration, subtasks: ready, duration },
            );
            if failure.is_some() {
                return failure;
            }
            let _ = replanned;
        }
    }

    fn finish(&mut self, plan: &mut Plan, id: &SubtaskId, status: SubtaskStatus) {
        if let Some(s) = plan.get_mut(id) {
            s.status = status;
        }
        self.trace.push(
            self.world.clock,
            TraceEvent::SubtaskFinished { iteration: self.iteration, subtask: id.clone(), status },
        );
    }

    fn run_blind(&mut self, plan: &mut Plan, id: &SubtaskId, elapsed: &mut BTreeMap<RobotId, f64>) -> Step {
        let subtask = plan.get(id).expect("ready ids come from the plan").clone();
        let Some(p) = subtask.primitive() else {
            self.finish(plan, id, SubtaskStatus::Failed);
            return Step::Done;
        };
        let verdict = self.world.check_preconditions(&p);
        if !verdict.passed {
            self.trace.push(
                self.world.clock,
                TraceEvent::PrimitiveSkipped {
                    iteration: self.iteration,
                    subtask: id.clone(),
                    primitive: p.to_string(),
                    reason: verdict.reason,
                },
            );
            self.finish(plan, id, SubtaskStatus::Failed);
            return Step::Done;
        }
        let succeeded = self.apply(id, &p, elapsed);
        self.finish(plan, id, if succeeded { SubtaskStatus::Done } else { SubtaskStatus::Failed });
        Step::Done
    }

    /// Applies a primitive, logs it and charges its robot. Returns success.
    fn apply(&mut self, id: &SubtaskId, p: &Primitive, elapsed: &mut BTreeMap<RobotId, f64>) -> bool {
        match self.world.apply_untimed(p, self.rng) {
            Ok(out) => {
                *elapsed.entry(p.robot().clone()).or_default() += out.elapsed;
                let clock = self.world.clock + elapsed[p.robot()];
                self.trace.push(
                    clock,
                    TraceEvent::PrimitiveExecuted {
                        iteration: self.iteration,
                        subtask: id.clone(),
                        primitive: p.to_string(),
                        succeeded: out.succeeded,
                        side_effect: out.side_effect,
                        elapsed: out.elapsed,
                    },
                );
                out.succeeded
            }
            Err(e) => {
                // The checker passed something the world refuses.
                self.trace.push(
                    self.world.clock,
                    TraceEvent::PrimitiveSkipped {
                        iteration: self.iteration,
                        subtask: id.clone(),
                        primitive: p.to_string(),
                        reason: e.to_string(),
                    },
                );
                false
            }
        }
    }

    fn run_checked(&mut self, plan: &mut Plan, id: &SubtaskId, elapsed: &mut BTreeMap<RobotId, f64>) -> Step {
        let subtask = plan.get(id).expect("ready ids come from the plan").clone();
        let mut attempt: u32 = 0;
        loop {
            let obs = self.observe(&subtask.robot);
            let req = ReasonerRequest::precheck(&self.mission.instruction, self.iteration, &subtask, obs.clone());
            let verdict = match self.gateway.check(&req) {
                Ok(v) => v,
                Err(e) => return Step::Failed(classify_error(&e), e.to_string()),
            };
            let clock = self.world.clock + elapsed.get(&subtask.robot).copied().unwrap_or(0.0);
            let check_seq = self.trace.push(
                clock,
                TraceEvent::PreCheck {
                    iteration: self.iteration,
                    subtask: id.clone(),
                    robot: subtask.robot.clone(),
                    attempt,
                    recheck: attempt > 0,
                    verdict: verdict.clone(),
                },
            );
            if !verdict.passed {
                let cause = if attempt == 0 {
                    let req = ReasonerRequest::reflect(
                        &self.mission.instruction,
                        self.iteration,
                        &subtask,
                        obs.clone(),
                        verdict.clone(),
                    );
                    let cause = match self.gateway.reflect(&req) {
                        Ok(c) => c,
                        Err(e) => return Step::Failed(classify_error(&e), e.to_string()),
                    };
                    self.db.append(Reflection {
                        iteration: self.iteration,
                        subtask: subtask.clone(),
                        cause: cause.clone(),
                        observation_ref: check_seq,
                        created_at: clock,
                    });
                    self.new_reflections += 1;
                    self.trace.push(
                        clock,
                        TraceEvent::ReflectionAdded {
                            iteration: self.iteration,
                            subtask: id.clone(),
                            cause,
                            db_size: self.db.len(),
                        },
                    );
                    PlanCause::Reflective
                } else {
                    PlanCause::Recovery
                };
                return self.replan(plan, id, obs, cause);
            }

            if let Some(s) = plan.get_mut(id) {
                s.status = SubtaskStatus::Running;
            }
            let Some(p) = subtask.primitive() else {
                self.finish(plan, id, SubtaskStatus::Failed);
                return Step::Failed(IterationOutcome::PlanFailure, format!("`{id}` is malformed"));
            };
            self.apply(id, &p, elapsed);

            let obs = self.observe(&subtask.robot);
            let req = ReasonerRequest::postcheck(&self.mission.instruction, self.iteration, &subtask, obs);
            let verdict = match self.gateway.check(&req) {
                Ok(v) => v,
                Err(e) => return Step::Failed(classify_error(&e), e.to_string()),
            };
            let clock = self.world.clock + elapsed.get(&subtask.robot).copied().unwrap_or(0.0);
            self.trace.push(
                clock,
                TraceEvent::PostCheck { iteration: self.iteration, subtask: id.clone(), attempt, verdict: verdict.clone() },
            );
            if verdict.passed {
                self.finish(plan, id, SubtaskStatus::Done);
                return Step::Done;
            }
            attempt += 1;
            if attempt > self.config.max_retries {
                self.finish(plan, id, SubtaskStatus::Failed);
                return Step::Failed(
                    IterationOutcome::PlanFailure,
                    format!("`{id}` still failing after {} retries: {}", self.config.max_retries, verdict.reason),
                );
            }
            self.trace.push(clock, TraceEvent::Retry { iteration: self.iteration, subtask: id.clone(), attempt });
        }
    }

    fn replan(
        &mut self,
        plan: &mut Plan,
        failed: &SubtaskId,
        obs: crate::perception::Observation,
        cause: PlanCause,
    ) -> Step {
        if self.budget == 0 {
            return Step::Failed(
                IterationOutcome::PlanFailure,
                format!("replan budget of {} exhausted at `{failed}`", self.config.replan_budget),
            );
        }
        self.budget -= 1;
        let req = ReasonerRequest::decompose(
            &self.mission.instruction,
            self.iteration,
            self.registry,
            obs,
            self.db.deduped(),
            Some(plan.clone()),
            self.config.robot_count,
            Some(failed.clone()),
        );
        let mut suffix = match self.gateway.decompose(&req) {
            Ok(p) => p.subtasks,
            Err(e) => return Step::Failed(classify_error(&e), e.to_string()),
        };
        Plan::renumber(&mut suffix, plan.next_index());
        let suffix_len = suffix.len();
        match plan::splice_replan(plan, failed, suffix, self.scenario) {
            Ok(spliced) => {
                *plan = spliced;
                self.trace.push(
                    self.world.clock,
                    TraceEvent::Replan {
                        iteration: self.iteration,
                        failed: failed.clone(),
                        cause,
                        suffix_len,
                        budget_left: self.budget,
                    },
                );
                self.trace.push(
                    self.world.clock,
                    TraceEvent::PlanSnapshot {
                        iteration: self.iteration,
                        cause,
                        length: plan::plan_length(plan),
                        plan: plan.clone(),
                    },
                );
                Step::Replanned
            }
            Err(e @ (SpliceError::Rejected(_) | SpliceError::UnknownSubtask(_) | SpliceError::AlreadyDone(_))) => {
                Step::Failed(IterationOutcome::PlanFailure, e.to_string())
            }
        }
    }
}

/// Subtasks that can run now: every dependency finished, at most one per
/// robot (lowest plan index first).
fn ready_layer(plan: &Plan) -> Vec<SubtaskId> {
    let finished = |id: &SubtaskId| {
        plan.get(id).is_some_and(|s| matches!(s.status, SubtaskStatus::Done | SubtaskStatus::Failed))
    };
    let mut robots = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for s in &plan.subtasks {
        if s.status != SubtaskStatus::Pending {
            continue;
        }
        if s.deps.iter().all(finished) && robots.insert(&s.robot) {
            out.push(s.id.clone());
        }
    }
    out
}

/// Within a layer, a robot heading for a station another robot is about to
/// leave goes after the one leaving.
fn next_in_layer(world: &WorldState, plan: &Plan, pending: &[SubtaskId]) -> usize {
    let leaving = |robot: &RobotId| {
        pending.iter().any(|id| {
            plan.get(id).is_some_and(|s| &s.robot == robot && matches!(s.primitive(), Some(Primitive::Navigate { .. })))
        })
    };
    pending
        .iter()
        .position(|id| match plan.get(id).and_then(|s| s.primitive()) {
            Some(Primitive::Navigate { robot, fixture }) => match world.occupant(&fixture) {
                Some(other) if other != &robot => !leaving(other),
                _ => true,
            },
            _ => true,
        })
        .unwrap_or(0)
}

/// Result of running a plan open-loop with every primitive succeeding.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub world: WorldState,
    /// Sum of layer durations, starting from zero.
    pub makespan: f64,
    /// Subtasks whose world preconditions did not hold when their turn came.
    pub skipped: Vec<(SubtaskId, String)>,
    /// Subtasks in the order they were attempted.
    pub order: Vec<SubtaskId>,
}

/// Executes `plan` on a fresh copy of `scenario` with deterministic
/// success, using the executor's layer scheduling and time accounting.
pub fn simulate_plan(scenario: &Scenario, plan: &Plan) -> Result<Simulation, ScenarioError> {
    let mut world = load_scenario(scenario)?;
    let mut plan = plan.clone();
    plan.reset_statuses();
    let mut always = rand::rngs::mock::StepRng::new(0, 0);
    let mut makespan = 0.0;
    let mut skipped = Vec::new();
    let mut order = Vec::new();
    loop {
        let mut pending = ready_layer(&plan);
        if pending.is_empty() {
            break;
        }
        let mut elapsed: BTreeMap<RobotId, f64> = BTreeMap::new();
        while !pending.is_empty() {
            let id = pending.remove(next_in_layer(&world, &plan, &pending));
            order.push(id.clone());
            let subtask = plan.get_mut(&id).expect("ready ids come from the plan");
            let status = match subtask.primitive().map(|p| (world.apply_untimed(&p, &mut always), p)) {
                Some((Ok(out), p)) => {
                    *elapsed.entry(p.robot().clone()).or_default() += out.elapsed;
                    if out.succeeded {
                        SubtaskStatus::Done
                    } else {
                        SubtaskStatus::Failed
                    }
                }
                Some((Err(e), _)) => {
                    skipped.push((id.clone(), e.to_string()));
                    SubtaskStatus::Failed
                }
                None => {
                    skipped.push((id.clone(), "malformed subtask".to_owned()));
                    SubtaskStatus::Failed
                }
            };
            subtask.status = status;
        }
        let duration = elapsed.values().copied().fold(0.0, f64::max);
        world.advance_clock(duration);
        makespan += duration;
    }
    Ok(Simulation { world, makespan, skipped, order })
}
