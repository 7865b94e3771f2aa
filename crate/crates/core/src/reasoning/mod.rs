//! The reasoner gateway: one request/response interface for item proposal,
//! decomposition, pre/post-condition checks and reflection, with
//! interchangeable backends.

mod checks;
mod oracle;
mod planner;
mod remote;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::SubtaskId;
use crate::perception::{ItemRegistry, Observation};
use crate::plan::{Plan, Subtask};
use crate::verdict::Verdict;

pub use checks::{postcheck_observation, precheck_observation};
pub use oracle::{proposal_for, OracleBackend};
pub use planner::{Knowledge, KnowledgeItem};
pub use remote::{RemoteBackend, RemoteConfig, PROMPT_TEMPLATE_VERSION};
pub use transcript::{EpisodeTag, Recorder, ReplayBackend, Transcript, TranscriptEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    ProposeItems,
    Decompose,
    PreCheck,
    PostCheck,
    Reflect,
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A stored explanation of why a planned subtask was infeasible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub iteration: u32,
    pub subtask: Subtask,
    pub cause: String,
    /// Sequence number of the trace event holding the failed pre-check.
    pub observation_ref: usize,
    pub created_at: f64,
}

/// One call into a reasoner. Which optional fields are set depends on `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub kind: RequestKind,
    pub instruction: String,
    /// Evolution iteration the call belongs to; 0 during exploration.
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry_snapshot: Option<ItemRegistry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<Subtask>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reflections: Vec<Reflection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_plan: Option<Plan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_count: Option<usize>,
    /// Set when asking for the suffix that replaces this subtask onwards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replan_from: Option<SubtaskId>,
    /// The failed verdict a reflection is asked about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl ReasonerRequest {
    fn bare(kind: RequestKind, instruction: &str, iteration: u32) -> Self {
        ReasonerRequest {
            kind,
            instruction: instruction.to_owned(),
            iteration,
            registry_snapshot: None,
            observation: None,
            subtask: None,
            reflections: Vec::new(),
            previous_plan: None,
            robot_count: None,
            replan_from: None,
            verdict: None,
        }
    }

    pub fn propose_items(instruction: &str) -> Self {
        Self::bare(RequestKind::ProposeItems, instruction, 0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn decompose(
        instruction: &str,
        iteration: u32,
        registry: &ItemRegistry,
        observation: Observation,
        reflections: Vec<Reflection>,
        previous_plan: Option<Plan>,
        robot_count: usize,
        replan_from: Option<SubtaskId>,
    ) -> Self {
        ReasonerRequest {
            registry_snapshot: Some(registry.clone()),
            observation: Some(observation),
            reflections,
            previous_plan,
            robot_count: Some(robot_count),
            replan_from,
            ..Self::bare(RequestKind::Decompose, instruction, iteration)
        }
    }

    pub fn precheck(instruction: &str, iteration: u32, subtask: &Subtask, observation: Observation) -> Self {
        ReasonerRequest {
            subtask: Some(subtask.clone()),
            observation: Some(observation),
            ..Self::bare(RequestKind::PreCheck, instruction, iteration)
        }
    }

    pub fn postcheck(instruction: &str, iteration: u32, subtask: &Subtask, observation: Observation) -> Self {
        ReasonerRequest {
            kind: RequestKind::PostCheck,
            ..Self::precheck(instruction, iteration, subtask, observation)
        }
    }

    pub fn reflect(
        instruction: &str,
        iteration: u32,
        subtask: &Subtask,
        observation: Observation,
        verdict: Verdict,
    ) -> Self {
        ReasonerRequest {
            kind: RequestKind::Reflect,
            verdict: Some(verdict),
            ..Self::precheck(instruction, iteration, subtask, observation)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }

    /// Checks that the fields `kind` needs are present.
    pub fn validate(&self) -> Result<(), BackendError> {
        let missing = |what: &str| Err(BackendError::InvalidRequest(format!("{} request without {what}", self.kind)));
        if self.instruction.trim().is_empty() {
            return missing("an instruction");
        }
        match self.kind {
            RequestKind::ProposeItems => Ok(()),
            RequestKind::Decompose => match &self.registry_snapshot {
                None => missing("a registry snapshot"),
                Some(r) if r.is_empty() => missing("any discovered items"),
                Some(_) if self.robot_count.unwrap_or(0) == 0 => missing("a robot count"),
                Some(_) => Ok(()),
            },
            RequestKind::PreCheck | RequestKind::PostCheck | RequestKind::Reflect => {
                if self.subtask.is_none() {
                    return missing("a subtask");
                }
                if self.observation.is_none() {
                    return missing("an observation");
                }
                if self.kind == RequestKind::Reflect && !self.verdict.as_ref().is_some_and(|v| !v.passed) {
                    return missing("a failed verdict");
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReasonerResponse {
    Items { items: Vec<String> },
    Plan { plan: Plan },
    Verdict { verdict: Verdict },
    Reflection { cause: String },
}

impl ReasonerResponse {
    pub fn kind_matches(&self, kind: RequestKind) -> bool {
        matches!(
            (self, kind),
            (ReasonerResponse::Items { .. }, RequestKind::ProposeItems)
                | (ReasonerResponse::Plan { .. }, RequestKind::Decompose)
                | (ReasonerResponse::Verdict { .. }, RequestKind::PreCheck | RequestKind::PostCheck)
                | (ReasonerResponse::Reflection { .. }, RequestKind::Reflect)
        )
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Network or endpoint failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not parse reasoner output: {reason}")]
    Parse { reason: String, raw: String },
    #[error("backend cannot serve this request: {0}")]
    Unsupported(String),
    #[error("replay diverged at request {index}: expected {expected}, got {actual}")]
    ReplayDivergence { index: usize, expected: String, actual: String },
    #[error("replay transcript exhausted after {0} requests")]
    ReplayExhausted(usize),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// A reasoner. Implementations may keep state (a transcript cursor, a
/// connection) but must answer identical requests identically where they can.
pub trait Backend: Send {
    /// Identifier recorded in plan provenance and transcripts.
    fn id(&self) -> &str;

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError>;

    /// Hash of the prompt templates this backend renders, if any.
    fn template_hash(&self) -> Option<String> {
        None
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        (**self).call(request)
    }

    fn template_hash(&self) -> Option<String> {
        (**self).template_hash()
    }
}

/// Answers every decomposition with the previous plan, unchanged, and
/// delegates everything else to the oracle. Models a reasoner that ignores
/// its reflections.
#[derive(Debug, Default)]
pub struct EchoBackend {
    oracle: OracleBackend,
}

impl Backend for EchoBackend {
    fn id(&self) -> &str {
        "echo"
    }

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        if request.kind == RequestKind::Decompose {
            if let Some(plan) = &request.previous_plan {
                let mut plan = plan.clone();
                plan.reset_statuses();
                plan.iteration = request.iteration.max(1);
                return Ok(ReasonerResponse::Plan { plan });
            }
        }
        self.oracle.call(request)
    }
}

/// Which backend to build. Each episode gets its own instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    Oracle,
    Echo,
    Remote(RemoteConfig),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        Ok(match self {
            BackendSpec::Oracle => Box::new(OracleBackend),
            BackendSpec::Echo => Box::new(EchoBackend::default()),
            BackendSpec::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())?),
        })
    }

    /// `oracle`, `echo` or `remote`; the remote endpoint comes from the environment.
    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "oracle" => Ok(BackendSpec::Oracle),
            "echo" => Ok(BackendSpec::Echo),
            "remote" => RemoteConfig::from_env().map(BackendSpec::Remote),
            other => Err(format!("unknown backend `{other}` (expected oracle, echo or remote)")),
        }
    }
}

/// Typed front door over a backend: builds requests, checks response kinds.
pub struct Gateway<'a> {
    backend: &'a mut dyn Backend,
    /// Extra attempts after a transport failure.
    pub transport_retries: usize,
}

impl<'a> Gateway<'a> {
    pub fn new(backend: &'a mut dyn Backend) -> Self {
        Gateway { backend, transport_retries: 2 }
    }

    pub fn backend_id(&self) -> String {
        self.backend.id().to_owned()
    }

    pub fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            match self.backend.call(request) {
                Ok(r) if r.kind_matches(request.kind) => return Ok(r),
                Ok(r) => {
                    return Err(BackendError::Parse {
                        reason: format!("expected a {} response", request.kind),
                        raw: serde_json::to_string(&r).unwrap_or_default(),
                    })
                }
                Err(e) if e.is_retriable() && attempt < self.transport_retries => attempt += 1,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn propose_items(&mut self, instruction: &str) -> Result<Vec<String>, BackendError> {
        match self.call(&ReasonerRequest::propose_items(instruction))? {
            ReasonerResponse::Items { items } => Ok(items),
            _ => unreachable!("kind checked in call"),
        }
    }

    pub fn decompose(&mut self, request: &ReasonerRequest) -> Result<Plan, BackendError> {
        match self.call(request)? {
            ReasonerResponse::Plan { plan } => Ok(plan),
            _ => unreachable!("kind checked in call"),
        }
    }

    pub fn check(&mut self, request: &ReasonerRequest) -> Result<Verdict, BackendError> {
        match self.call(request)? {
            ReasonerResponse::Verdict { verdict } => Ok(verdict),
            _ => unreachable!("kind checked in call"),
        }
    }

    pub fn reflect(&mut self, request: &ReasonerRequest) -> Result<String, BackendError> {
        match self.call(request)? {
            ReasonerResponse::Reflection { cause } => Ok(cause),
            _ => unreachable!("kind checked in call"),
        }
    }
}
