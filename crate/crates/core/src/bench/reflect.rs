//! Scoring how well a reasoner turns reflections into a better plan.
//!
//! Each trial replays the first iteration with the oracle to obtain the
//! flawed plan and its reflections, then asks the backend under test for
//! the next iteration's plan. The trial scores when that plan reaches the
//! goal open-loop and is exactly as short as the canonical plan.

use serde::{Deserialize, Serialize};

use super::tasks::{canonical_plan, instantiate_task, TaskName};
use crate::executor::{run_episode, simulate_plan, EpisodeConfig, Mission, Setting};
use crate::perception::observe;
use crate::plan::{self, plan_length};
use crate::reasoning::{Backend, Gateway, OracleBackend, ReasonerRequest};
use crate::world::load_scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReflectOutcome {
    Scored { success: bool, length: usize, canonical_length: usize, goal_reached: bool },
    Unscored { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectTrial {
    pub trial: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: ReflectOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectReport {
    pub task: TaskName,
    pub robot_count: usize,
    pub backend: String,
    pub trials: Vec<ReflectTrial>,
    pub successes: usize,
    pub unscored: usize,
    /// Successes over all trials; unscored trials count as misses.
    pub rate: f64,
}

pub fn reflect_success_rate(
    task: TaskName,
    backend: &mut dyn Backend,
    trials: u32,
    base_seed: u64,
    robot_count: usize,
) -> anyhow::Result<ReflectReport> {
    anyhow::ensure!(trials > 0, "trials must be at least 1");
    let setting = if robot_count > 1 { Setting::Remac } else { Setting::Re };
    let spec = task.spec();
    let backend_id = backend.id().to_owned();
    let mut gateway = Gateway::new(backend);
    let mut rows = Vec::new();
    for trial in 0..trials {
        let seed = base_seed ^ u64::from(trial);
        let scenario = instantiate_task(spec, seed).with_robot_count(robot_count);
        let mission = Mission::for_task(spec, &scenario)?;
        let mut first = EpisodeConfig::new(setting, seed);
        first.robot_count = robot_count;
        first.max_iterations = 1;
        first.success_prob = Some(1.0);
        let iteration1 = run_episode(&scenario, &mission, &first, &mut OracleBackend)?;
        let flawed = iteration1.plans.last().cloned();

        let world = load_scenario(&scenario)?;
        let lead = &scenario.robots[0].id;
        let request = ReasonerRequest::decompose(
            &mission.instruction,
            2,
            &iteration1.explored,
            observe(&world, lead)?,
            iteration1.reflections.deduped(),
            flawed,
            robot_count,
            None,
        );
        let outcome = match gateway.decompose(&request) {
            Err(e) if matches!(crate::executor::classify_error(&e), crate::executor::IterationOutcome::Aborted) => {
                ReflectOutcome::Unscored { reason: e.to_string() }
            }
            Err(_) => ReflectOutcome::Scored {
                success: false,
                length: 0,
                canonical_length: canonical_length(task, &world, robot_count)?,
                goal_reached: false,
            },
            Ok(plan) => {
                let canonical_length = canonical_length(task, &world, robot_count)?;
                let valid = plan::validate(&plan, &scenario).is_empty();
                let goal_reached = valid && mission.goal.holds(&simulate_plan(&scenario, &plan)?.world);
                let length = plan_length(&plan);
                ReflectOutcome::Scored {
                    success: goal_reached && length == canonical_length,
                    length,
                    canonical_length,
                    goal_reached,
                }
            }
        };
        rows.push(ReflectTrial { trial, seed, outcome });
    }
    let successes = rows.iter().filter(|r| matches!(r.outcome, ReflectOutcome::Scored { success: true, .. })).count();
    let unscored = rows.iter().filter(|r| matches!(r.outcome, ReflectOutcome::Unscored { .. })).count();
    Ok(ReflectReport {
        task,
        robot_count,
        backend: backend_id,
        rate: successes as f64 / rows.len() as f64,
        trials: rows,
        successes,
        unscored,
    })
}

fn canonical_length(task: TaskName, world: &crate::world::WorldState, robot_count: usize) -> anyhow::Result<usize> {
    canonical_plan(task.spec(), world, robot_count)
        .map(|p| plan_length(&p))
        .ok_or_else(|| anyhow::anyhow!("no canonical plan for {task} with {robot_count} robots"))
}
