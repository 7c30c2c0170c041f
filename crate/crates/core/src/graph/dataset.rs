use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EntityId, EntityKind, EntityRegistry, GraphError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// One interaction type per pair (DrugBank style).
    Multiclass,
    /// One or more interaction types per pair (TWOSIDES style).
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdiPair {
    pub u: EntityId,
    pub v: EntityId,
    /// Sorted, deduplicated label ids.
    pub labels: Vec<usize>,
}

impl DdiPair {
    /// Smallest label; the category a case is filed under.
    pub fn primary_label(&self) -> usize {
        self.labels[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdiDataset {
    pub pairs: Vec<DdiPair>,
    pub relation_names: Vec<String>,
    pub task_mode: TaskMode,
}

impl DdiDataset {
    pub fn load(path: impl AsRef<Path>, mode: TaskMode, registry: &mut EntityRegistry) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, mode, registry)
    }

    /// Parses with the label vocabulary inferred in first-seen order.
    pub fn parse(text: &str, mode: TaskMode, registry: &mut EntityRegistry) -> Result<Self> {
        Self::parse_inner(text, mode, registry, None)
    }

    /// Parses against a fixed label vocabulary; unseen label strings are errors.
    pub fn parse_with_vocab(
        text: &str,
        mode: TaskMode,
        registry: &mut EntityRegistry,
        vocab: &[String],
    ) -> Result<Self> {
        Self::parse_inner(text, mode, registry, Some(vocab))
    }

    fn parse_inner(
        text: &str,
        mode: TaskMode,
        registry: &mut EntityRegistry,
        vocab: Option<&[String]>,
    ) -> Result<Self> {
        let mut names: Vec<String> = vocab.map(|v| v.to_vec()).unwrap_or_default();
        let mut label_ids: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let line_no = lineno + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(GraphError::Columns {
                    line: line_no,
                    expected: 3,
                    found: cols.len(),
                });
            }
            if cols[0] == cols[1] {
                return Err(GraphError::Invalid {
                    line: line_no,
                    message: format!("self-pair {:?}", cols[0]),
                });
            }
            let mut labels = Vec::new();
            for raw in cols[2].split(',') {
                let label = raw.trim();
                if label.is_empty() {
                    return Err(GraphError::Invalid {
                        line: line_no,
                        message: "empty label".into(),
                    });
                }
                let id = match label_ids.get(label) {
                    Some(&id) => id,
                    None if vocab.is_some() => {
                        return Err(GraphError::Invalid {
                            line: line_no,
                            message: format!("unknown label {label:?}"),
                        })
                    }
                    None => {
                        names.push(label.to_string());
                        label_ids.insert(label.to_string(), names.len() - 1);
                        names.len() - 1
                    }
                };
                labels.push(id);
            }
            labels.sort_unstable();
            labels.dedup();
            if mode == TaskMode::Multiclass && labels.len() != 1 {
                return Err(GraphError::Invalid {
                    line: line_no,
                    message: format!("multiclass pair carries {} labels", labels.len()),
                });
            }
            let u = registry.intern(cols[0], EntityKind::Drug);
            let v = registry.intern(cols[1], EntityKind::Drug);
            pairs.push(DdiPair { u, v, labels });
        }
        Ok(Self {
            pairs,
            relation_names: names,
            task_mode: mode,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Distinct drugs in pair order of first appearance, then sorted by id.
    pub fn drugs(&self) -> Vec<EntityId> {
        let mut drugs: Vec<EntityId> = self.pairs.iter().flat_map(|p| [p.u, p.v]).collect();
        drugs.sort_unstable();
        drugs.dedup();
        drugs
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.relation_names.iter().position(|n| n == name)
    }
}
