use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use remac::bench::tasks::{instantiate_task, TaskName};
use remac::bench::{emit_report, episode_tag, reflect_success_rate, replay_transcript, run_bench, BenchConfig, ReportFormat};
use remac::executor::{run_episode, EpisodeConfig, EpisodeTrace, Mission, ReflectionDb, Setting, TraceEvent};
use remac::plan::render_layers;
use remac::reasoning::{BackendSpec, Recorder, Transcript};
use remac::world::Scenario;

/// Multi-robot kitchen planner with pre/post checks, reflection and plan evolution.
///
/// The remote backend reads REMAC_REMOTE_URL, REMAC_REMOTE_MODEL and
/// REMAC_REMOTE_API_KEY.
#[derive(Parser)]
#[command(name = "remac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode.
    Run(RunArgs),
    /// Sweep tasks x settings x trials and write a report.
    Bench {
        /// BenchConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// Also record every reasoner call under OUT/transcripts.
        #[arg(long)]
        transcripts: bool,
    },
    /// Score how often a backend turns reflections into the canonical plan.
    ReflectBench {
        #[arg(long)]
        task: TaskName,
        #[arg(long, default_value = "oracle")]
        backend: String,
        #[arg(long, default_value_t = 5)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        robots: usize,
        /// Record the scored calls here for later rescoring.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Rescore from a recorded transcript instead of calling the backend.
        #[arg(long, conflicts_with_all = ["backend", "transcript"])]
        replay: Option<PathBuf>,
    },
    /// Rerun a recorded episode against its transcript.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        /// Trace of the original run; the replayed trace must match it byte for byte.
        #[arg(long)]
        expect_trace: Option<PathBuf>,
    },
    /// Summarize a trace or a reflection database.
    Inspect {
        #[arg(long, conflicts_with = "reflections", required_unless_present = "reflections")]
        trace: Option<PathBuf>,
        #[arg(long)]
        reflections: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: TaskName,
    #[arg(long, default_value = "REMAC")]
    setting: Setting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "oracle")]
    backend: String,
    #[arg(long, default_value_t = 3)]
    max_iterations: u32,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    #[arg(long, default_value_t = 5)]
    replan_budget: u32,
    #[arg(long)]
    success_prob: Option<f64>,
    /// Team size; defaults to 1, or 2 under REMAC.
    #[arg(long)]
    robots: Option<usize>,
    /// Scenario JSON to use instead of the randomized instance for TASK and SEED.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Keep the end state of one iteration as the start of the next.
    #[arg(long)]
    continue_mode: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    reflections: Option<PathBuf>,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn backend(name: &str) -> Result<BackendSpec> {
    BackendSpec::parse(name).map_err(anyhow::Error::msg)
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => run(args),
        Command::Bench { config, out, transcripts } => {
            let config = match config {
                Some(path) => BenchConfig::load(&path)?,
                None => BenchConfig::default(),
            };
            let transcript_dir = out.join("transcripts");
            let report = run_bench(&config, transcripts.then_some(transcript_dir.as_path()))?;
            emit_report(&report, &out, &[ReportFormat::Json, ReportFormat::Table])?;
            print!("{}", report.to_table());
            println!("report written to {}", out.display());
            Ok(0)
        }
        Command::ReflectBench { task, backend: name, trials, seed, robots, transcript, replay } => {
            let report = match replay {
                Some(path) => {
                    let mut b = remac::reasoning::ReplayBackend::new(Transcript::read(&path)?);
                    reflect_success_rate(task, &mut b, trials, seed, robots)?
                }
                None => {
                    let inner = backend(&name)?.build()?;
                    let tag = episode_tag(task, &EpisodeConfig::new(Setting::Remac, seed));
                    let mut rec = Recorder::new(inner, tag);
                    let report = reflect_success_rate(task, &mut rec, trials, seed, robots)?;
                    if let Some(path) = transcript {
                        rec.transcript().write(&path)?;
                    }
                    report
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!(
                "reflect success rate {:.2}% ({} of {} trials, {} unscored)",
                report.rate * 100.0,
                report.successes,
                report.trials.len(),
                report.unscored
            );
            Ok(0)
        }
        Command::Replay { transcript, expect_trace } => {
            let result = replay_transcript(&Transcript::read(&transcript)?)?;
            if let Some(path) = expect_trace {
                let expected = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                anyhow::ensure!(
                    expected == result.trace.to_jsonl(),
                    "replayed trace differs from {}",
                    path.display()
                );
                println!("replayed trace matches {}", path.display());
            }
            println!("replay ok: {:?}", result.status);
            Ok(0)
        }
        Command::Inspect { trace, reflections } => {
            if let Some(path) = trace {
                inspect_trace(&EpisodeTrace::read(&path)?);
            }
            if let Some(path) = reflections {
                let db = ReflectionDb::load(&path)?;
                println!("{} reflections ({} distinct)", db.len(), db.deduped().len());
                for r in &db.entries {
                    println!("  iteration {} at {:.1}s  {}: {}", r.iteration, r.created_at, r.subtask.signature(), r.cause);
                }
            }
            Ok(0)
        }
    }
}

fn run(args: RunArgs) -> Result<u8> {
    let spec = args.task.spec();
    let scenario = match &args.scenario {
        Some(path) => Scenario::from_path(path)?,
        None => instantiate_task(spec, args.seed),
    };
    let mut config = EpisodeConfig::new(args.setting, args.seed);
    config.max_iterations = args.max_iterations;
    config.max_retries = args.max_retries;
    config.replan_budget = args.replan_budget;
    config.success_prob = args.success_prob;
    config.continue_mode = args.continue_mode;
    if let Some(n) = args.robots {
        config.robot_count = n;
    }
    let mission = Mission::for_task(spec, &scenario)?;
    let mut recorder = Recorder::new(backend(&args.backend)?.build()?, episode_tag(args.task, &config));
    let result = run_episode(&scenario, &mission, &config, &mut recorder)?;

    println!("{} / {} / seed {}: {:?}", args.task, args.setting, args.seed, result.status);
    if let Some(reason) = &result.reason {
        println!("reason: {reason}");
    }
    for (i, plan) in result.plans.iter().enumerate() {
        println!("iteration {} plan:", i + 1);
        print!("{}", render_layers(plan));
    }
    println!("{}", serde_json::to_string(&result.metrics)?);
    if let Some(path) = &args.trace {
        result.trace.write(path)?;
    }
    if let Some(path) = &args.reflections {
        result.reflections.save(path)?;
    }
    if let Some(path) = &args.transcript {
        recorder.transcript().write(path)?;
    }
    Ok(result.status.exit_code() as u8)
}

fn inspect_trace(trace: &EpisodeTrace) {
    println!("{} events", trace.events.len());
    for r in &trace.events {
        match &r.event {
            TraceEvent::EpisodeStart { instruction, setting, seed, .. } => {
                println!("[{:>7.1}] start `{instruction}` {setting} seed {seed}", r.clock)
            }
            TraceEvent::ExplorationEnd { elapsed, stopped_early, registry_size } => println!(
                "[{:>7.1}] exploration done in {elapsed:.1}s, {registry_size} items, early stop {stopped_early}",
                r.clock
            ),
            TraceEvent::PlanSnapshot { iteration, cause, length, .. } => {
                println!("[{:>7.1}] iteration {iteration} plan ({cause:?}) length {length}", r.clock)
            }
            TraceEvent::PreCheck { subtask, verdict, .. } if !verdict.passed => {
                println!("[{:>7.1}] pre-check failed {subtask}: {}", r.clock, verdict.reason)
            }
            TraceEvent::PostCheck { subtask, verdict, .. } if !verdict.passed => {
                println!("[{:>7.1}] post-check failed {subtask}: {}", r.clock, verdict.reason)
            }
            TraceEvent::ReflectionAdded { subtask, cause, .. } => {
                println!("[{:>7.1}] reflection on {subtask}: {cause}", r.clock)
            }
            TraceEvent::IterationEnd { iteration, outcome, done, total, .. } => {
                println!("[{:>7.1}] iteration {iteration} {outcome:?}, {done}/{total} subtasks", r.clock)
            }
            TraceEvent::EpisodeEnd { status, metrics, .. } => {
                println!("[{:>7.1}] end {status:?} {}", r.clock, serde_json::to_string(metrics).unwrap_or_default())
            }
            _ => {}
        }
    }
}
