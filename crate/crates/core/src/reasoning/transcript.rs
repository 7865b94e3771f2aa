//! Recording reasoner traffic and replaying it.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ReasonerRequest, ReasonerResponse};

/// Identifies the episode a transcript came from, enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTag {
    pub task: String,
    pub setting: String,
    pub seed: u64,
    pub max_retries: u32,
    pub max_iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_prob: Option<f64>,
    pub robot_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub episode: EpisodeTag,
    pub iteration: u32,
    pub request: ReasonerRequest,
    pub response: ReasonerResponse,
    /// Wall-clock seconds; zero for in-process backends.
    pub latency: f64,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
}

/// Append-only log of reasoner calls, stored as JSON lines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Transcript { entries })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
            entries.push(entry);
        }
        Ok(Transcript { entries })
    }

    pub fn episode(&self) -> Option<&EpisodeTag> {
        self.entries.first().map(|e| &e.episode)
    }
}

/// Wraps a backend and logs every successful call.
pub struct Recorder<B> {
    inner: B,
    tag: EpisodeTag,
    transcript: Transcript,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B, tag: EpisodeTag) -> Self {
        Recorder { inner, tag, transcript: Transcript::default() }
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        let started = Instant::now();
        let response = self.inner.call(request)?;
        let latency = if self.inner.id() == "remote" { started.elapsed().as_secs_f64() } else { 0.0 };
        self.transcript.entries.push(TranscriptEntry {
            episode: self.tag.clone(),
            iteration: request.iteration,
            request: request.clone(),
            response: response.clone(),
            latency,
            backend: self.inner.id().to_owned(),
            template_hash: self.inner.template_hash(),
        });
        Ok(response)
    }

    fn template_hash(&self) -> Option<String> {
        self.inner.template_hash()
    }
}

/// Serves recorded responses in order, insisting that every live request
/// matches its recorded counterpart byte for byte.
pub struct ReplayBackend {
    entries: Vec<TranscriptEntry>,
    cursor: usize,
    id: String,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        let id = transcript.entries.first().map_or_else(|| "replay".to_owned(), |e| e.backend.clone());
        ReplayBackend { entries: transcript.entries, cursor: 0, id }
    }

    /// Number of recorded calls not yet consumed.
    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
        let Some(entry) = self.entries.get(self.cursor) else {
            return Err(BackendError::ReplayExhausted(self.cursor));
        };
        let expected = entry.request.to_json();
        let actual = request.to_json();
        if expected != actual {
            return Err(BackendError::ReplayDivergence { index: self.cursor, expected: summarize(&expected, &actual), actual: summarize(&actual, &expected) });
        }
        self.cursor += 1;
        Ok(entry.response.clone())
    }

    fn template_hash(&self) -> Option<String> {
        self.entries.first().and_then(|e| e.template_hash.clone())
    }
}

/// The region around the first byte where `a` and `b` differ.
fn summarize(a: &str, b: &str) -> String {
    let at = a.bytes().zip(b.bytes()).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
    let start = a.floor_char_boundary(at.saturating_sub(40));
    let end = a.ceil_char_boundary((at + 40).min(a.len()));
    format!("…{}…", &a[start..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::OracleBackend;

    fn tag() -> EpisodeTag {
        EpisodeTag {
            task: "OpenMicrowavePnP".into(),
            setting: "REMAC".into(),
            seed: 1,
            max_retries: 2,
            max_iterations: 3,
            success_prob: None,
            robot_count: 2,
        }
    }

    #[test]
    fn record_then_replay() {
        let mut rec = Recorder::new(OracleBackend, tag());
        let req = ReasonerRequest::propose_items("heat the vegetables");
        let live = rec.call(&req).unwrap();
        let transcript = rec.into_transcript();
        let parsed = Transcript::from_jsonl(&transcript.to_jsonl()).unwrap();
        assert_eq!(parsed, transcript);

        let mut replay = ReplayBackend::new(parsed);
        assert_eq!(replay.call(&req).unwrap(), live);
        assert_eq!(replay.call(&req), Err(BackendError::ReplayExhausted(1)));
    }

    #[test]
    fn altered_request_diverges() {
        let mut rec = Recorder::new(OracleBackend, tag());
        rec.call(&ReasonerRequest::propose_items("heat the vegetables")).unwrap();
        let mut replay = ReplayBackend::new(rec.into_transcript());
        let err = replay.call(&ReasonerRequest::propose_items("heat the fish")).unwrap_err();
        assert!(matches!(err, BackendError::ReplayDivergence { index: 0, .. }), "{err}");
    }
}
