use serde::{Deserialize, Serialize};

use super::{GatewayError, Message, Result};

pub const DEFAULT_TASK_DESCRIPTION: &str = "You are a pharmacology assistant. Given two drugs, reference cases of \
similar drug pairs, and factual associations between the two drugs from a biomedical knowledge graph, explain the \
most likely interaction mechanism and choose the interaction type from the candidate list.";

/// A retrieved case as shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRendering {
    pub drugs: (String, String),
    pub paths: Vec<String>,
    pub mechanism: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub with_cases: bool,
    pub with_assoc: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            with_cases: true,
            with_assoc: true,
        }
    }
}

/// Everything a prediction prompt is rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_description: String,
    /// Query drug names.
    pub drugs: (String, String),
    pub descriptions: (String, String),
    pub cases: Vec<CaseRendering>,
    /// Rendered paths between the query drugs.
    pub paths: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub ablation: Ablation,
    /// Character budget for each case mechanism.
    pub mechanism_budget: usize,
    /// Number of answers requested (1 multiclass, 5 multilabel).
    pub answers: usize,
}

/// Cuts `text` to at most `budget` characters, marking the cut with `…`.
pub fn truncate_chars(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let mut out: String = text.chars().take(budget.saturating_sub(1)).collect();
    out.push('…');
    out
}

pub(crate) fn push_paths(out: &mut String, paths: &[String]) {
    for p in paths {
        out.push_str("- ");
        out.push_str(p);
        out.push('\n');
    }
}

impl PromptBundle {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(GatewayError::Precondition("candidate list is empty".into()));
        }
        if self.answers == 0 {
            return Err(GatewayError::Precondition("at least one answer must be requested".into()));
        }
        Ok(())
    }

    /// System message with the task description, then one user message with
    /// the query, reference cases, associations, candidates and the output
    /// instruction, in that order.
    pub fn render(&self) -> Vec<Message> {
        let mut user = String::new();
        user.push_str(&format!(
            "Query drugs:\nDrug A: {} ({})\nDrug B: {} ({})\n",
            self.drugs.0, self.descriptions.0, self.drugs.1, self.descriptions.1
        ));
        if self.ablation.with_cases && !self.cases.is_empty() {
            user.push_str("\nReference cases:\n");
            for (i, c) in self.cases.iter().enumerate() {
                user.push_str(&format!("Case {}: {} and {}\n", i + 1, c.drugs.0, c.drugs.1));
                if !c.paths.is_empty() {
                    user.push_str("Associations:\n");
                    push_paths(&mut user, &c.paths);
                }
                user.push_str(&format!(
                    "Mechanism: {}\nType: {}\n",
                    truncate_chars(&c.mechanism, self.mechanism_budget),
                    c.label
                ));
            }
        }
        if self.ablation.with_assoc && !self.paths.is_empty() {
            user.push_str("\nDrug associations:\n");
            push_paths(&mut user, &self.paths);
        }
        user.push_str("\nCandidates:\n");
        for (i, c) in self.candidates.iter().enumerate() {
            user.push_str(&format!("{}. {}\n", i + 1, c.name));
        }
        if self.answers == 1 {
            user.push_str(
                "\nReply with two lines:\nMechanism: <one-paragraph explanation>\nAnswer: <exactly one candidate name>\n",
            );
        } else {
            user.push_str(&format!(
                "\nReply with two lines:\nMechanism: <one-paragraph explanation>\nAnswer: <the {} most likely candidate names, best first, separated by ';'>\n",
                self.answers
            ));
        }
        vec![Message::system(&self.task_description), Message::user(&user)]
    }
}
