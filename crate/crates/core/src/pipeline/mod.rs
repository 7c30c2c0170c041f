//! End-to-end prediction: configuration, the engine that wires the stages
//! together, evaluation metrics and synthetic fixtures.

mod config;
mod engine;
pub mod fixtures;
mod guard;
pub mod metrics;

use std::path::Path;

use thiserror::Error;

pub use config::{DataPaths, PipelineConfig};
pub use engine::{DataBundle, Engine, Evaluation, MetricsReport, PairFailure, PredictionRecord, RetrievedCase};
pub use guard::{LabelGuard, LabelUse};
pub use metrics::{ClassMetrics, Outcome};

use crate::embedding::EmbeddingError;
use crate::gateway::GatewayError;
use crate::gnn::GnnError;
use crate::graph::GraphError;
use crate::paths::PathError;
use crate::repository::RepoError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("label leakage: {0}")]
    Leakage(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("missing stage input: {0}")]
    Missing(&'static str),
    #[error("{stage}: {detail}")]
    Stage { stage: &'static str, detail: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            detail: err.to_string(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
