//! Case-based reasoning for drug–drug interaction prediction.

pub mod embedding;
pub mod gateway;
pub mod gnn;
pub mod graph;
pub mod paths;
pub mod pipeline;
pub mod repository;
