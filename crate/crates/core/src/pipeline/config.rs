use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::embedding::EmbeddingConfig;
use crate::gateway::{Ablation, ChatClientConfig};
use crate::gnn::{Activation, TrainConfig};
use crate::graph::TaskMode;
use crate::repository::RefinementConfig;

/// File locations used by the command-line stages. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub kg: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub repository: Option<PathBuf>,
}

impl DataPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.kg,
            &mut self.dataset,
            &mut self.bundle,
            &mut self.splits,
            &mut self.checkpoint,
            &mut self.repository,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub task_mode: TaskMode,
    /// Weight of the semantic term in hybrid retrieval.
    pub lambda: f64,
    /// Reference cases per prompt.
    pub k: usize,
    /// Paths per pair.
    pub p: usize,
    /// Candidate relations kept from the GNN; `None` picks 3 for multiclass
    /// and 10 for multilabel.
    pub n: Option<usize>,
    /// GNN depth, also the path length.
    pub depth: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub ablation: Ablation,
    pub refinement: RefinementConfig,
    /// Share of training pairs sampled into the initial repository.
    pub init_fraction: f64,
    pub mechanism_budget: usize,
    /// Insert resolved valid-split cases during evaluation.
    pub online_refine: bool,
    pub workers: Option<usize>,
    pub seed: u64,
    pub train: TrainConfig,
    pub gateway: ChatClientConfig,
    pub embedding: EmbeddingConfig,
    pub paths: DataPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task_mode: TaskMode::Multiclass,
            lambda: 0.5,
            k: 5,
            p: 5,
            n: None,
            depth: 3,
            hidden_dim: 16,
            activation: Activation::Relu,
            ablation: Ablation::default(),
            refinement: RefinementConfig::default(),
            init_fraction: 0.1,
            mechanism_budget: 600,
            online_refine: false,
            workers: None,
            seed: 0,
            train: TrainConfig::default(),
            gateway: ChatClientConfig::default(),
            embedding: EmbeddingConfig::hashed(64),
            paths: DataPaths::default(),
        }
    }
}

impl PipelineConfig {
    /// Number of labels a prediction returns.
    pub fn answers(&self) -> usize {
        match self.task_mode {
            TaskMode::Multiclass => 1,
            TaskMode::Multilabel => 5,
        }
    }

    pub fn candidates(&self) -> usize {
        self.n.unwrap_or(match self.task_mode {
            TaskMode::Multiclass => 3,
            TaskMode::Multilabel => 10,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.k == 0 || self.p == 0 || self.depth == 0 || self.hidden_dim == 0 {
            return bad("k, p, depth and hidden_dim must be ≥ 1".into());
        }
        if self.candidates() < self.answers() {
            return bad(format!(
                "n = {} candidates cannot supply {} answers",
                self.candidates(),
                self.answers()
            ));
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return bad(format!("init_fraction {} outside (0, 1]", self.init_fraction));
        }
        self.refinement.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve(base);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, json + "\n").map_err(|e| PipelineError::io(path, e))
    }
}
