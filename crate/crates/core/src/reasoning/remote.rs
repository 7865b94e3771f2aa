//! Chat-completion backend over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::plan::{Plan, Provenance, Subtask};
use crate::verdict::Verdict;
use crate::world::{Primitive, PrimitiveKind};

use super::planner::belief_from;
use super::{Backend, BackendError, ReasonerRequest, ReasonerResponse, RequestKind};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

const SYSTEM: &str = include_str!("../../prompts/v1/system.md");
const PROPOSE: &str = include_str!("../../prompts/v1/propose_items.md");
const DECOMPOSE: &str = include_str!("../../prompts/v1/decompose.md");
const PRECHECK: &str = include_str!("../../prompts/v1/precheck.md");
const POSTCHECK: &str = include_str!("../../prompts/v1/postcheck.md");
const REFLECT: &str = include_str!("../../prompts/v1/reflect.md");

pub const ENV_URL: &str = "REMAC_REMOTE_URL";
pub const ENV_MODEL: &str = "REMAC_REMOTE_MODEL";
pub const ENV_API_KEY: &str = "REMAC_REMOTE_API_KEY";

/// Hex SHA-256 over every bundled template, in a fixed order.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    for t in [SYSTEM, PROPOSE, DECOMPOSE, PRECHECK, POSTCHECK, REFLECT] {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base of an OpenAI-style API; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Never serialized; read from the environment when absent.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_reprompts")]
    pub max_reprompts: usize,
}

fn default_timeout() -> u64 {
    120
}

fn default_reprompts() -> usize {
    2
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, String> {
        let base_url = std::env::var(ENV_URL).map_err(|_| format!("{ENV_URL} is not set"))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| format!("{ENV_MODEL} is not set"))?;
        Ok(RemoteConfig {
            base_url,
            model,
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout_secs: default_timeout(),
            max_reprompts: default_reprompts(),
        })
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    hash: String,
}

impl RemoteBackend {
    pub fn new(mut config: RemoteConfig) -> Result<Self, BackendError> {
        if config.base_url.trim().is_empty() {
            return Err(BackendError::InvalidRequest("remote backend needs a base URL".into()));
        }
        if config.api_key.is_none() {
            config.api_key = std::env::var(ENV_API_KEY).ok();
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(RemoteBackend { config, agent, hash: template_hash() })
    }

    fn complete(&self, messages: &[Value]) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
            "n": 1,
        });
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| BackendError::Transport(e.to_string()))?;
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("endpoint returned non-JSON ({e})")))?;
        doc.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn template_hash(&self) -> Option<String> {
        Some(self.hash.clone())
    }

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        request.validate()?;
        let mut messages = vec![
            json!({"role": "system", "content": SYSTEM}),
            json!({"role": "user", "content": render(request)}),
        ];
        let mut attempt = 0;
        loop {
            let raw = self.complete(&messages)?;
            match parse_response(request, &raw) {
                Ok(r) => return Ok(r),
                Err(reason) if attempt < self.config.max_reprompts => {
                    attempt += 1;
                    messages.push(json!({"role": "assistant", "content": raw}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!(
                            "Your reply could not be used: {reason}. Reply again with exactly one fenced ```json block in the requested format."
                        ),
                    }));
                }
                Err(reason) => return Err(BackendError::Parse { reason, raw }),
            }
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

/// Fills the template for a request.
pub fn render(req: &ReasonerRequest) -> String {
    let template = match req.kind {
        RequestKind::ProposeItems => PROPOSE,
        RequestKind::Decompose => DECOMPOSE,
        RequestKind::PreCheck => PRECHECK,
        RequestKind::PostCheck => POSTCHECK,
        RequestKind::Reflect => REFLECT,
    };
    let reflections = if req.reflections.is_empty() {
        "(none)".to_owned()
    } else {
        req.reflections
            .iter()
            .map(|r| format!("- {} (while planning `{}`)", r.cause, r.subtask.signature()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let replan_note = match &req.replan_from {
        Some(id) => format!(
            "Subtask `{id}` of the previous plan cannot run. Subtasks marked done stay as they are; \
             return only the new subtasks that replace `{id}` and everything after it."
        ),
        None => "Return the complete plan.".to_owned(),
    };
    template
        .replace("{{instruction}}", &req.instruction)
        .replace("{{iteration}}", &req.iteration.to_string())
        .replace("{{robot_count}}", &req.robot_count.unwrap_or(1).to_string())
        .replace("{{registry}}", &req.registry_snapshot.as_ref().map(pretty).unwrap_or_default())
        .replace("{{observation}}", &req.observation.as_ref().map(pretty).unwrap_or_default())
        .replace("{{subtask}}", &req.subtask.as_ref().map(pretty).unwrap_or_default())
        .replace("{{previous_plan}}", &req.previous_plan.as_ref().map(pretty).unwrap_or_else(|| "{}".into()))
        .replace("{{reflections}}", &reflections)
        .replace("{{replan_note}}", &replan_note)
        .replace("{{reason}}", req.verdict.as_ref().map_or("", |v| v.reason.as_str()))
}

/// The single fenced block in a reply. Zero or several blocks is an error.
pub fn fenced_block(raw: &str) -> Result<&str, String> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let lang = after[..body_start].trim();
        if !(lang.is_empty() || lang.eq_ignore_ascii_case("json")) {
            return Err(format!("unexpected fenced block language `{lang}`"));
        }
        let body = &after[body_start..];
        let end = body.find("```").ok_or("unterminated fenced block")?;
        blocks.push(body[..end].trim());
        rest = &body[end + 3..];
    }
    match blocks.as_slice() {
        [one] => Ok(one),
        [] => Err("no fenced ```json block".into()),
        _ => Err(format!("{} fenced blocks, expected exactly one", blocks.len())),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemsDoc {
    items: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    id: String,
    robot: String,
    verb: PrimitiveKind,
    args: Vec<String>,
    #[serde(default)]
    deps: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    subtasks: Vec<StepDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictDoc {
    passed: bool,
    #[serde(default)]
    reason: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CauseDoc {
    cause: String,
}

/// Strictly parses a model reply for the given request.
pub fn parse_response(req: &ReasonerRequest, raw: &str) -> Result<ReasonerResponse, String> {
    let block = fenced_block(raw)?;
    let err = |e: serde_json::Error| format!("malformed JSON: {e}");
    match req.kind {
        RequestKind::ProposeItems => {
            let doc: ItemsDoc = serde_json::from_str(block).map_err(err)?;
            Ok(ReasonerResponse::Items { items: doc.items })
        }
        RequestKind::Decompose => {
            let doc: PlanDoc = serde_json::from_str(block).map_err(err)?;
            let registry = req.registry_snapshot.clone().unwrap_or_default();
            let mut belief = belief_from(&registry, req.observation.as_ref());
            let mut subtasks = Vec::with_capacity(doc.subtasks.len());
            for step in doc.subtasks {
                let p = Primitive::from_parts(step.verb, step.robot.as_str().into(), &step.args)
                    .ok_or_else(|| format!("subtask `{}`: wrong arguments for {}", step.id, step.verb.as_str()))?;
                let contained = crate::bench::tasks::contained_placement(&belief, &p);
                belief.force_effects(&p);
                subtasks.push(Subtask::from_primitive(step.id.as_str(), &p, contained).with_deps(step.deps));
            }
            let mut plan = Plan::new(req.iteration.max(1), subtasks);
            plan.provenance = Provenance { backend: "remote".into(), transcript_ref: None };
            Ok(ReasonerResponse::Plan { plan })
        }
        RequestKind::PreCheck | RequestKind::PostCheck => {
            let doc: VerdictDoc = serde_json::from_str(block).map_err(err)?;
            let verdict = if doc.passed {
                Verdict::pass()
            } else if doc.reason.trim().is_empty() {
                return Err("a failed verdict needs a reason".into());
            } else {
                Verdict::fail(doc.reason)
            };
            Ok(ReasonerResponse::Verdict { verdict: verdict.with_raw(raw) })
        }
        RequestKind::Reflect => {
            let doc: CauseDoc = serde_json::from_str(block).map_err(err)?;
            if doc.cause.trim().is_empty() {
                return Err("empty cause".into());
            }
            Ok(ReasonerResponse::Reflection { cause: doc.cause })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_block() {
        assert_eq!(fenced_block("x\n```json\n{\"a\":1}\n```\n").unwrap(), "{\"a\":1}");
        assert!(fenced_block("no block").is_err());
        assert!(fenced_block("```json\n{}\n```\n```json\n{}\n```").is_err());
        assert!(fenced_block("```python\nprint()\n```").is_err());
    }

    #[test]
    fn verdict_parsing_is_strict() {
        let req = ReasonerRequest::propose_items("x");
        let req = ReasonerRequest { kind: RequestKind::PreCheck, ..req };
        let ok = parse_response(&req, "```json\n{\"passed\": false, \"reason\": \"door closed\"}\n```").unwrap();
        assert!(matches!(ok, ReasonerResponse::Verdict { verdict } if verdict.reason == "door closed"));
        assert!(parse_response(&req, "```json\n{\"passed\": false}\n```").is_err());
        assert!(parse_response(&req, "```json\n{\"passed\": true, \"extra\": 1}\n```").is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(template_hash(), template_hash());
        assert_eq!(template_hash().len(), 64);
    }
}
