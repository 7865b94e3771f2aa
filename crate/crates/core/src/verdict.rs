use serde::{Deserialize, Serialize};

/// Outcome of a pre- or post-condition check.
///
/// A passing verdict never carries a reason. `raw` points back at whatever
/// produced the judgment (a transcript line, or nothing for the world model).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl Verdict {
    pub fn pass() -> Self {
        Self { passed: true, reason: String::new(), raw: None }
    }

    pub fn fail(reason: impl Into<String>) -> Self {
        let reason = reason.into();
        debug_assert!(!reason.is_empty(), "failed verdicts need a reason");
        Self { passed: false, reason, raw: None }
    }

    pub fn with_raw(mut self, raw: impl Into<String>) -> Self {
        self.raw = Some(raw.into());
        self
    }

    /// Folds a sequence of checks, keeping the first failure.
    pub fn all(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        verdicts
            .into_iter()
            .find(|v| !v.passed)
            .unwrap_or_else(Verdict::pass)
    }
}
