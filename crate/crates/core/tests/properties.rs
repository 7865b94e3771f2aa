//! Property suites over random walks, plans and seeds.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use remac::bench::tasks::{canonical_plan, instantiate_task, TaskName};
use remac::executor::{run_episode, simulate_plan, EpisodeConfig, Mission, Setting};
use remac::perception::observe;
use remac::plan::{layers, plan_length, splice_replan, validate, Plan, SubtaskStatus};
use remac::reasoning::{precheck_observation, OracleBackend};
use remac::plan::Subtask;
use remac::world::{load_scenario, Primitive, Scenario, WorldState};

fn task_strategy() -> impl Strategy<Value = TaskName> {
    prop::sample::select(TaskName::ALL.to_vec())
}

/// Every primitive that names entities of the scenario.
fn all_primitives(s: &Scenario) -> Vec<Primitive> {
    let mut out = Vec::new();
    for r in &s.robots {
        let robot = r.id.clone();
        for f in &s.fixtures {
            let fixture = f.id.clone();
            out.push(Primitive::Navigate { robot: robot.clone(), fixture: fixture.clone() });
            out.push(Primitive::Open { robot: robot.clone(), fixture: fixture.clone() });
            out.push(Primitive::Close { robot: robot.clone(), fixture: fixture.clone() });
            out.push(Primitive::TurnOn { robot: robot.clone(), fixture: fixture.clone() });
            out.push(Primitive::TurnOff { robot: robot.clone(), fixture: fixture.clone() });
            for o in &s.objects {
                let object = o.id.clone();
                out.push(Primitive::Place { robot: robot.clone(), object: object.clone(), fixture: fixture.clone() });
                out.push(Primitive::PlaceAndStart { robot: robot.clone(), object, fixture: fixture.clone() });
            }
        }
        for o in &s.objects {
            out.push(Primitive::Pick { robot: robot.clone(), object: o.id.clone() });
        }
    }
    out
}

/// Walks that mostly pick applicable primitives, so they get somewhere.
fn walk(world: &mut WorldState, candidates: &[Primitive], picks: &[(bool, usize)], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut problems = Vec::new();
    for &(prefer_applicable, index) in picks {
        let applicable: Vec<&Primitive> =
            candidates.iter().filter(|p| world.check_preconditions(p).passed).collect();
        let p = if prefer_applicable && !applicable.is_empty() {
            applicable[index % applicable.len()]
        } else {
            &candidates[index % candidates.len()]
        };
        let before = world.clone();
        match world.apply(p, rng) {
            Ok(out) => {
                if world.clock < before.clock {
                    problems.push(format!("clock went backwards on {p}"));
                }
                if out.elapsed < 0.0 {
                    problems.push(format!("negative duration on {p}"));
                }
            }
            Err(_) => {
                if *world != before {
                    problems.push(format!("rejected {p} still changed the world"));
                }
            }
        }
        problems.extend(world.invariant_violations());
    }
    problems
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walks_keep_world_invariants(
        task in task_strategy(),
        seed in 0u64..1000,
        robots in 1usize..=3,
        p in 0.5f64..=1.0,
        picks in prop::collection::vec((prop::bool::weighted(0.8), 0usize..10_000), 1..=50),
    ) {
        let mut scenario = instantiate_task(task.spec(), seed).with_robot_count(robots);
        scenario.primitive_success_prob = remac::world::PerPrimitive::manipulation_success(p);
        let mut world = load_scenario(&scenario).unwrap();
        let candidates = all_primitives(&scenario);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problems = walk(&mut world, &candidates, &picks, &mut rng);
        prop_assert!(problems.is_empty(), "{problems:?}");
    }

    /// Where the oracle can see everything a primitive touches, its verdict
    /// agrees with the world's own precondition check.
    #[test]
    fn oracle_precheck_matches_world_on_visible_states(
        task in task_strategy(),
        seed in 0u64..1000,
        picks in prop::collection::vec((prop::bool::weighted(0.8), 0usize..10_000), 0..=30),
    ) {
        let scenario = instantiate_task(task.spec(), seed).with_robot_count(2);
        let mut world = load_scenario(&scenario).unwrap();
        let candidates = all_primitives(&scenario);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        walk(&mut world, &candidates, &picks, &mut rng);
        for p in &candidates {
            let obs = observe(&world, p.robot()).unwrap();
            let visible = p.object().is_none_or(|o| obs.object(o).is_some());
            if !visible {
                continue;
            }
            let subtask = Subtask::from_primitive("t1", p, false);
            let oracle = precheck_observation(&subtask, &obs);
            let truth = world.check_preconditions(p);
            prop_assert_eq!(oracle.passed, truth.passed, "{} oracle: {} world: {}", p, oracle.reason, truth.reason);
        }
    }

    #[test]
    fn layers_partition_canonical_plans(task in task_strategy(), seed in 0u64..1000, robots in 1usize..=2) {
        let scenario = instantiate_task(task.spec(), seed).with_robot_count(robots);
        let world = load_scenario(&scenario).unwrap();
        let plan = canonical_plan(task.spec(), &world, robots).unwrap();
        prop_assert!(validate(&plan, &scenario).is_empty());
        let ls = layers(&plan);
        prop_assert_eq!(ls.len(), plan_length(&plan));
        let mut seen: Vec<_> = ls.iter().flatten().cloned().collect();
        seen.sort();
        let mut all: Vec<_> = plan.subtasks.iter().map(|s| s.id.clone()).collect();
        all.sort();
        prop_assert_eq!(seen, all);
        for (i, layer) in ls.iter().enumerate() {
            let mut robots_here: Vec<_> = layer.iter().map(|id| plan.get(id).unwrap().robot.clone()).collect();
            robots_here.sort();
            robots_here.dedup();
            prop_assert_eq!(robots_here.len(), layer.len(), "layer {} reuses a robot", i);
            for id in layer {
                for dep in &plan.get(id).unwrap().deps {
                    let at = ls.iter().position(|l| l.contains(dep)).unwrap();
                    prop_assert!(at < i, "{} runs no later than its dependency {}", id, dep);
                }
            }
        }
        let sim = simulate_plan(&scenario, &plan).unwrap();
        prop_assert!(sim.skipped.is_empty());
    }

    /// Splicing a replacement suffix never touches the finished prefix.
    #[test]
    fn splice_keeps_the_done_prefix(task in task_strategy(), seed in 0u64..1000, cut in 0usize..12) {
        let scenario = instantiate_task(task.spec(), seed);
        let world = load_scenario(&scenario).unwrap();
        let mut plan = canonical_plan(task.spec(), &world, 1).unwrap();
        let cut = cut % plan.subtasks.len();
        for s in plan.subtasks.iter_mut().take(cut) {
            s.status = SubtaskStatus::Done;
        }
        let failed = plan.subtasks[cut].id.clone();
        let mut suffix: Vec<Subtask> = plan.subtasks[cut..].to_vec();
        Plan::renumber(&mut suffix, plan.next_index());
        let spliced = splice_replan(&plan, &failed, suffix, &scenario).unwrap();
        prop_assert_eq!(&spliced.subtasks[..cut], &plan.subtasks[..cut]);
        prop_assert_eq!(spliced.subtasks.len(), plan.subtasks.len());
        prop_assert!(spliced.get(&failed).is_none());
        prop_assert!(validate(&spliced, &scenario).is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_trace(task in task_strategy(), seed in any::<u64>(), setting in prop::sample::select(Setting::ALL.to_vec())) {
        let scenario = instantiate_task(task.spec(), seed);
        prop_assert_eq!(&scenario, &instantiate_task(task.spec(), seed));
        let mission = Mission::for_task(task.spec(), &scenario).unwrap();
        let cfg = EpisodeConfig { success_prob: Some(0.85), ..EpisodeConfig::new(setting, seed) };
        let a = run_episode(&scenario, &mission, &cfg, &mut OracleBackend).unwrap();
        let b = run_episode(&scenario, &mission, &cfg, &mut OracleBackend).unwrap();
        prop_assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
        prop_assert_eq!(a.reflections, b.reflections);
    }
}
