//! Text generation: drug descriptions, mechanism distillation, prediction
//! prompts and revisions, behind one client over a remote chat endpoint or a
//! deterministic mock.

mod mock;
mod parse;
mod prompt;
mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockDefault, MockPolicy, MockRule};
pub use parse::{best_overlap, parse_prediction, ParseStatus, ParsedAnswer};
pub use prompt::{truncate_chars, Ablation, Candidate, CaseRendering, PromptBundle, DEFAULT_TASK_DESCRIPTION};
pub use remote::RemoteBackend;

use crate::graph::TaskMode;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("chat request failed after {attempts} attempts: {detail}")]
    Remote { attempts: usize, detail: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("response cache {path}: {detail}")]
    Cache { path: String, detail: String },
    #[error("mock policy {path}: {detail}")]
    Policy { path: String, detail: String },
    #[error("model returned empty text")]
    EmptyResponse,
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: &str) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: &str) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// What a request is for; the mock uses it to pick an output field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatTask {
    Describe,
    Distill,
    Predict,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub task: ChatTask,
    pub messages: Vec<Message>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

fn default_retries() -> usize {
    2
}
fn default_timeout() -> u64 {
    60
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum ChatClientConfig {
    Remote {
        endpoint: String,
        model: String,
        /// Environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_retries")]
        max_retries: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        cache_path: Option<PathBuf>,
    },
    Mock {
        /// Inline policy; ignored when `policy_path` is set.
        #[serde(default)]
        policy: MockPolicy,
        #[serde(default)]
        policy_path: Option<PathBuf>,
    },
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        ChatClientConfig::Mock {
            policy: MockPolicy::default(),
            policy_path: None,
        }
    }
}

/// Model output for one prediction prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mechanism: String,
    /// Relation ids, best first.
    pub labels: Vec<usize>,
    pub raw: String,
    pub parse_status: ParseStatus,
}

pub struct ChatClient {
    backend: Box<dyn ChatBackend>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ChatClient")
    }
}

fn nonempty(text: String) -> Result<String> {
    if text.trim().is_empty() {
        Err(GatewayError::EmptyResponse)
    } else {
        Ok(text.trim().to_string())
    }
}

impl ChatClient {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self { backend }
    }

    pub fn mock(policy: MockPolicy) -> Self {
        Self::new(Box::new(policy))
    }

    pub fn from_config(config: &ChatClientConfig) -> Result<Self> {
        Ok(match config {
            ChatClientConfig::Remote {
                endpoint,
                model,
                api_key_env,
                temperature,
                max_retries,
                timeout_secs,
                max_in_flight,
                cache_path,
            } => Self::new(Box::new(RemoteBackend::new(
                endpoint.clone(),
                model.clone(),
                api_key_env.clone(),
                *temperature,
                *max_retries,
                *timeout_secs,
                *max_in_flight,
                cache_path.clone(),
            )?)),
            ChatClientConfig::Mock { policy, policy_path } => match policy_path {
                Some(p) => Self::mock(MockPolicy::load(p)?),
                None => Self::mock(policy.clone()),
            },
        })
    }

    fn ask(&self, task: ChatTask, system: &str, user: String) -> Result<String> {
        let request = ChatRequest {
            task,
            messages: vec![Message::system(system), Message::user(&user)],
        };
        nonempty(self.backend.complete(&request)?)
    }

    pub fn generate_description(&self, drug: &str) -> Result<String> {
        if drug.trim().is_empty() {
            return Err(GatewayError::Precondition("drug name is empty".into()));
        }
        self.ask(
            ChatTask::Describe,
            "You write concise functional descriptions of drugs.",
            format!(
                "Describe the drug {} in one or two sentences: its class, primary targets and main metabolic pathway.",
                drug.trim()
            ),
        )
    }

    /// Mechanism explanation for a pair with a known interaction type.
    pub fn distill_mechanism(&self, drugs: (&str, &str), label: &str, paths: &[String]) -> Result<String> {
        if label.trim().is_empty() {
            return Err(GatewayError::Precondition("interaction label is empty".into()));
        }
        let mut user = format!("Drugs: {} and {}\nInteraction type: {}\n", drugs.0, drugs.1, label);
        if !paths.is_empty() {
            user.push_str("Drug associations:\n");
            prompt::push_paths(&mut user, paths);
        }
        user.push_str("Explain clearly and accurately the mechanism that produces this interaction.");
        self.ask(
            ChatTask::Distill,
            "You explain drug-drug interaction mechanisms.",
            user,
        )
    }

    pub fn predict(&self, bundle: &PromptBundle, mode: TaskMode) -> Result<Prediction> {
        bundle.validate()?;
        let request = ChatRequest {
            task: ChatTask::Predict,
            messages: bundle.render(),
        };
        let raw = self.backend.complete(&request)?;
        let names: Vec<String> = bundle.candidates.iter().map(|c| c.name.clone()).collect();
        let parsed = if raw.trim().is_empty() {
            parse_prediction("", &names, mode, bundle.answers)
        } else {
            parse_prediction(&raw, &names, mode, bundle.answers)
        };
        Ok(Prediction {
            mechanism: parsed.mechanism,
            labels: parsed.labels.iter().map(|&i| bundle.candidates[i].id).collect(),
            raw,
            parse_status: parsed.status,
        })
    }

    /// Corrected mechanism for a case answered wrongly.
    pub fn revise_mechanism(&self, case: &CaseRendering, correct_label: &str) -> Result<String> {
        if correct_label.trim().is_empty() {
            return Err(GatewayError::Precondition("correct label is empty".into()));
        }
        let mut user = format!("Drugs: {} and {}\n", case.drugs.0, case.drugs.1);
        if !case.paths.is_empty() {
            user.push_str("Drug associations:\n");
            prompt::push_paths(&mut user, &case.paths);
        }
        user.push_str(&format!(
            "Previous explanation: {}\nThe correct interaction type is: {}\nRewrite the mechanism so it explains the correct interaction type.",
            case.mechanism, correct_label
        ));
        self.ask(
            ChatTask::Revise,
            "You correct drug-drug interaction explanations.",
            user,
        )
    }
}
