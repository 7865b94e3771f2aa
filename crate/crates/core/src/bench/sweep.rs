//! The four-setting benchmark sweep and its report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tasks::{canonical_plan, instantiate_task, TaskName};
use crate::executor::{
    run_episode, simulate_plan, EpisodeConfig, EpisodeMetrics, EpisodeResult, EpisodeStatus, Mission, Setting,
};
use crate::reasoning::{BackendSpec, EpisodeTag, Recorder, ReplayBackend, Transcript};
use crate::world::load_scenario;

fn default_trials() -> u32 {
    10
}

fn default_retries() -> u32 {
    2
}

fn default_iterations() -> u32 {
    3
}

fn default_remac_robots() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "all_tasks")]
    pub tasks: Vec<TaskName>,
    #[serde(default = "all_settings")]
    pub settings: Vec<Setting>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_prob: Option<f64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_iterations")]
    pub max_iterations: u32,
    /// Team size under REMAC; the other settings always run one robot.
    #[serde(default = "default_remac_robots")]
    pub remac_robots: usize,
}

fn all_tasks() -> Vec<TaskName> {
    TaskName::ALL.to_vec()
}

fn all_settings() -> Vec<Setting> {
    Setting::ALL.to_vec()
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tasks: all_tasks(),
            settings: all_settings(),
            trials: default_trials(),
            base_seed: 0,
            backend: BackendSpec::Oracle,
            success_prob: None,
            max_retries: default_retries(),
            max_iterations: default_iterations(),
            remac_robots: default_remac_robots(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.tasks.is_empty() || self.settings.is_empty() {
            return Err("at least one task and one setting are required".into());
        }
        for s in &self.settings {
            self.episode_config(*s, 0).validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: u32) -> u64 {
        self.base_seed ^ u64::from(trial)
    }

    pub fn episode_config(&self, setting: Setting, seed: u64) -> EpisodeConfig {
        let mut c = EpisodeConfig::new(setting, seed);
        c.max_retries = self.max_retries;
        c.max_iterations = self.max_iterations;
        c.success_prob = self.success_prob;
        if setting == Setting::Remac {
            c.robot_count = self.remac_robots;
        }
        c
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: BenchConfig =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        config.validate().map_err(anyhow::Error::msg)?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub task: TaskName,
    pub setting: Setting,
    pub trial: u32,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub metrics: EpisodeMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub reflections: usize,
    pub iterations: usize,
    /// Transcript file, relative to the report directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: TaskName,
    pub setting: Setting,
    pub trials: usize,
    pub task_success_rate: f64,
    pub subtask_completion_rate: f64,
    /// Mean over successful trials only.
    pub time: Option<f64>,
    /// Mean over successful trials only.
    pub plan_length: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-cell aggregates, in the order cells first appear in `rows`.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut cells: Vec<(TaskName, Setting)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.task, r.setting)) {
            cells.push((r.task, r.setting));
        }
    }
    cells
        .into_iter()
        .map(|(task, setting)| {
            let cell: Vec<&TrialRow> = rows.iter().filter(|r| r.task == task && r.setting == setting).collect();
            let ok = || cell.iter().filter(|r| r.metrics.task_success);
            Aggregate {
                task,
                setting,
                trials: cell.len(),
                task_success_rate: ok().count() as f64 / cell.len() as f64,
                subtask_completion_rate: mean(cell.iter().map(|r| r.metrics.subtask_completion_rate))
                    .unwrap_or(0.0),
                time: mean(ok().filter_map(|r| r.metrics.simulated_time)),
                plan_length: mean(ok().filter_map(|r| r.metrics.initial_plan_length.map(|l| l as f64))),
            }
        })
        .collect()
}

impl BenchReport {
    pub fn new(config: BenchConfig, rows: Vec<TrialRow>) -> Self {
        let aggregates = aggregate(&rows);
        BenchReport { config, rows, aggregates }
    }

    /// Recomputes aggregates from the rows and compares them exactly.
    pub fn check_consistency(&self) -> Result<(), String> {
        let fresh = aggregate(&self.rows);
        if fresh == self.aggregates {
            Ok(())
        } else {
            Err("report aggregates do not match its per-trial rows".into())
        }
    }

    pub fn cell(&self, task: TaskName, setting: Setting) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.task == task && a.setting == setting)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_table(&self) -> String {
        render_table(&self.aggregates)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_owned(), |v| format!("{v:.2}"))
}

/// Aligned text table with one line per (task, setting) cell.
pub fn render_table(aggregates: &[Aggregate]) -> String {
    let header = ["Task", "Setting", "Task Success Rate", "Subtask Completion Rate", "Time", "Length of Initial Plan"];
    let body: Vec<[String; 6]> = aggregates
        .iter()
        .map(|a| {
            [
                a.task.to_string(),
                a.setting.to_string(),
                pct(a.task_success_rate),
                pct(a.subtask_completion_rate),
                num(a.time),
                num(a.plan_length),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for row in &body {
        line(&row.each_ref().map(String::as_str));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

/// Writes `report.json` and/or `report.txt` into `dir`. Refuses to write a
/// report whose aggregates disagree with its rows.
pub fn emit_report(report: &BenchReport, dir: &Path, formats: &[ReportFormat]) -> anyhow::Result<Vec<PathBuf>> {
    report.check_consistency().map_err(anyhow::Error::msg)?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Json => ("report.json", report.to_json()),
            ReportFormat::Table => ("report.txt", report.to_table()),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs every (task, setting, trial) cell in parallel. Transcripts go to
/// `transcript_dir` when given. Episode aborts become failed rows.
pub fn run_bench(config: &BenchConfig, transcript_dir: Option<&Path>) -> anyhow::Result<BenchReport> {
    config.validate().map_err(anyhow::Error::msg)?;
    if let Some(dir) = transcript_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut jobs = Vec::new();
    for &task in &config.tasks {
        for &setting in &config.settings {
            for trial in 0..config.trials {
                jobs.push((task, setting, trial));
            }
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(task, setting, trial)| run_trial(config, task, setting, trial, transcript_dir))
        .collect::<anyhow::Result<Vec<TrialRow>>>()?;
    Ok(BenchReport::new(config.clone(), rows))
}

fn run_trial(
    config: &BenchConfig,
    task: TaskName,
    setting: Setting,
    trial: u32,
    transcript_dir: Option<&Path>,
) -> anyhow::Result<TrialRow> {
    let seed = config.trial_seed(trial);
    let spec = task.spec();
    let scenario = instantiate_task(spec, seed);
    let mission = Mission::for_task(spec, &scenario)?;
    let episode = config.episode_config(setting, seed);
    let aborted = |reason: String| TrialRow {
        task,
        setting,
        trial,
        seed,
        status: EpisodeStatus::BackendAbort,
        metrics: crate::executor::compute_metrics(&Default::default()),
        reason: Some(reason),
        reflections: 0,
        iterations: 0,
        transcript: None,
    };
    let backend = match config.backend.build() {
        Ok(b) => b,
        Err(e) => return Ok(aborted(e.to_string())),
    };
    let tag = episode_tag(task, &episode);
    let mut recorder = Recorder::new(backend, tag);
    let result = run_episode(&scenario, &mission, &episode, &mut recorder)?;
    let transcript = match transcript_dir {
        Some(dir) => {
            let name = format!("{task}_{setting}_{trial:03}.jsonl");
            recorder.transcript().write(&dir.join(&name))?;
            Some(name)
        }
        None => None,
    };
    Ok(TrialRow {
        task,
        setting,
        trial,
        seed,
        status: result.status,
        metrics: result.metrics,
        reason: result.reason,
        reflections: result.reflections.len(),
        iterations: result.plans.len(),
        transcript,
    })
}

/// Episode configuration recorded in a transcript tag.
pub fn config_from_tag(tag: &EpisodeTag) -> anyhow::Result<(TaskName, EpisodeConfig)> {
    let task: TaskName = tag.task.parse().map_err(anyhow::Error::msg)?;
    let setting: Setting = tag.setting.parse().map_err(anyhow::Error::msg)?;
    let mut config = EpisodeConfig::new(setting, tag.seed);
    config.max_retries = tag.max_retries;
    config.max_iterations = tag.max_iterations;
    config.success_prob = tag.success_prob;
    config.robot_count = tag.robot_count;
    Ok((task, config))
}

/// Reruns the episode a transcript was recorded from, serving every
/// reasoner call from the transcript. Fails on the first request that
/// differs from the recorded one, and when calls are left over.
pub fn replay_transcript(transcript: &Transcript) -> anyhow::Result<EpisodeResult> {
    let tag = transcript.episode().ok_or_else(|| anyhow::anyhow!("transcript is empty"))?;
    let (task, config) = config_from_tag(tag)?;
    let scenario = instantiate_task(task.spec(), config.seed);
    let mission = Mission::for_task(task.spec(), &scenario)?;
    let mut backend = ReplayBackend::new(transcript.clone());
    let result = run_episode(&scenario, &mission, &config, &mut backend)?;
    if result.status == EpisodeStatus::BackendAbort {
        anyhow::bail!("replay aborted: {}", result.reason.as_deref().unwrap_or("unknown reason"));
    }
    anyhow::ensure!(backend.remaining() == 0, "replay finished with {} recorded calls unused", backend.remaining());
    Ok(result)
}

pub fn episode_tag(task: TaskName, config: &EpisodeConfig) -> EpisodeTag {
    EpisodeTag {
        task: task.to_string(),
        setting: config.setting.to_string(),
        seed: config.seed,
        max_retries: config.max_retries,
        max_iterations: config.max_iterations,
        success_prob: config.success_prob,
        robot_count: config.robot_count,
    }
}

/// Makespan of the canonical plan for `robot_count` robots on the trial
/// scenario, under deterministic success and the default duration table.
pub fn canonical_makespan(task: TaskName, seed: u64, robot_count: usize) -> anyhow::Result<f64> {
    let scenario = instantiate_task(task.spec(), seed).with_robot_count(robot_count);
    let world = load_scenario(&scenario)?;
    let plan = canonical_plan(task.spec(), &world, robot_count)
        .ok_or_else(|| anyhow::anyhow!("no canonical plan for {task} with {robot_count} robots"))?;
    let sim = simulate_plan(&scenario, &plan)?;
    anyhow::ensure!(sim.skipped.is_empty(), "canonical plan for {task} hit {:?}", sim.skipped);
    Ok(sim.makespan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let table = render_table(&[]);
        assert_eq!(table.lines().count(), 1);
        assert!(table.starts_with("Task"));
    }

    #[test]
    fn config_defaults_fill_in() {
        let c: BenchConfig = serde_json::from_str(r#"{"trials": 3}"#).unwrap();
        assert_eq!(c.tasks.len(), 4);
        assert_eq!(c.backend, BackendSpec::Oracle);
        assert!(serde_json::from_str::<BenchConfig>(r#"{"trails": 3}"#).is_err());
        assert!(BenchConfig { trials: 0, ..BenchConfig::default() }.validate().is_err());
    }
}
