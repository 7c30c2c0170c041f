use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatTask, GatewayError, Result};

/// One keyword rule. A rule only takes part in tasks whose output field it
/// sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Matched case-insensitively as a substring of the prompt.
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockDefault {
    pub description: String,
    pub mechanism: String,
    /// Without a default label, unmatched predictions carry no answer line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Default for MockDefault {
    fn default() -> Self {
        Self {
            description: "A drug with no further description available.".into(),
            mechanism: "No specific mechanism is known for this combination.".into(),
            label: None,
        }
    }
}

/// Deterministic stand-in for a chat model.
///
/// For each request the mock looks at the rules that set the field the task
/// needs and picks the one whose pattern occurs earliest in the prompt (rule
/// order breaks ties). Prediction prompts list the most similar reference
/// case first, so the mock effectively copies its nearest neighbour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockPolicy {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: MockDefault,
}

impl MockPolicy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |detail: String| GatewayError::Policy {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    fn pick<'a>(&'a self, prompt: &str, field: impl Fn(&'a MockRule) -> Option<&'a String>) -> Option<&'a MockRule> {
        let haystack = prompt.to_lowercase();
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| field(r).is_some() && !r.pattern.is_empty())
            .filter_map(|(i, r)| haystack.find(&r.pattern.to_lowercase()).map(|pos| (pos, i, r)))
            .min_by_key(|(pos, i, _)| (*pos, *i))
            .map(|(_, _, r)| r)
    }

    pub fn respond(&self, request: &ChatRequest) -> String {
        let prompt: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        match request.task {
            ChatTask::Describe => self
                .pick(&prompt, |r| r.description.as_ref())
                .and_then(|r| r.description.clone())
                .unwrap_or_else(|| self.default.description.clone()),
            ChatTask::Distill | ChatTask::Revise => self
                .pick(&prompt, |r| r.mechanism.as_ref())
                .and_then(|r| r.mechanism.clone())
                .unwrap_or_else(|| self.default.mechanism.clone()),
            ChatTask::Predict => {
                let rule = self.pick(&prompt, |r| r.label.as_ref());
                let mechanism = rule
                    .and_then(|r| r.mechanism.clone())
                    .unwrap_or_else(|| self.default.mechanism.clone());
                let label = rule.and_then(|r| r.label.clone()).or_else(|| self.default.label.clone());
                match label {
                    Some(l) => format!("Mechanism: {mechanism}\nAnswer: {l}"),
                    None => format!("Mechanism: {mechanism}"),
                }
            }
        }
    }
}

impl ChatBackend for MockPolicy {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        Ok(self.respond(request))
    }
}
