//! Flow-based pair encoder, relation scoring head, training and gradient
//! validation.
//!
//! All learnable tensors live in one flat buffer ([`GnnParams`]) so the
//! optimizer, the checkpoint format and the finite-difference checker can
//! treat the model as a single vector. Gradients use the same layout.

mod encoder;
mod gradcheck;
mod params;
mod train;

use thiserror::Error;

pub use encoder::{
    attention_weight, candidate_filter, encode_pair, encode_pair_masked, loss_and_grad, score_relations,
    struct_sim, LossMode, PairRepresentation, TrainingInstance,
};
pub use gradcheck::{compare_gradients, grad_check, sample_coordinates, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{Activation, Checkpoint, GnnParams, GnnShape};
pub use train::{train, training_accuracy, FeatureTable, TrainConfig, TrainReport};

use crate::embedding::EmbeddingError;
use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("encoder needs two distinct entities")]
    SamePair,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("no features for entity {0}")]
    MissingFeature(u32),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = GnnError> = std::result::Result<T, E>;
