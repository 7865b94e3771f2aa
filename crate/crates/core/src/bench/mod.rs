//! Task suite, benchmark sweep and the reflect-quality harness.

pub mod reflect;
pub mod sweep;
pub mod tasks;

pub use reflect::{reflect_success_rate, ReflectOutcome, ReflectReport, ReflectTrial};
pub use sweep::{
    aggregate, canonical_makespan, config_from_tag, episode_tag, replay_transcript, emit_report, render_table, run_bench, Aggregate, BenchConfig, BenchReport,
    ReportFormat, TrialRow,
};
