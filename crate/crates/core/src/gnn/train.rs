use std::collections::HashMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{candidate_filter, encode_pair, loss_and_grad, score_relations, LossMode, TrainingInstance};
use super::{GnnError, GnnParams, Result};
use crate::embedding::TextEmbedding;
use crate::graph::{DdiDataset, EntityId, KnowledgeGraph, TaskMode};

/// Text features per entity; every drug of the training pairs needs one.
pub type FeatureTable = HashMap<EntityId, TextEmbedding>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub negatives_per_positive: usize,
    /// Hide each training pair's own interaction edges while encoding it.
    pub mask_own_edges: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 16,
            weight_decay: 0.0,
            seed: 0,
            loss_mode: LossMode::SoftmaxCe,
            negatives_per_positive: 1,
            mask_own_edges: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(GnnError::Config(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(GnnError::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(GnnError::Config("batch size must be ≥ 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(GnnError::Config(format!("weight decay {} must be ≥ 0", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: GnnParams,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            params[i] -= lr * (update + weight_decay * params[i]);
        }
    }
}

fn feature<'a>(features: &'a FeatureTable, e: EntityId) -> Result<&'a TextEmbedding> {
    features.get(&e).ok_or(GnnError::MissingFeature(e.0))
}

fn sample_negatives(labels: &[usize], num_labels: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool: Vec<usize> = (0..num_labels).filter(|r| labels.binary_search(r).is_err()).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Fits `params` on `train_pairs` of `dataset` with AdamW.
///
/// Each epoch visits the pairs in a seeded shuffle. Per-pair gradients of a
/// batch are computed in parallel and summed in batch order, so the result
/// depends only on the inputs and `config.seed`.
pub fn train(
    params: GnnParams,
    graph: &KnowledgeGraph,
    dataset: &DdiDataset,
    train_pairs: &[usize],
    features: &FeatureTable,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(GnnError::EmptyTrainSet);
    }
    let expected = match dataset.task_mode {
        TaskMode::Multiclass => LossMode::SoftmaxCe,
        TaskMode::Multilabel => LossMode::SigmoidBce,
    };
    if config.loss_mode != expected {
        return Err(GnnError::Config(format!(
            "loss {:?} does not fit a {:?} dataset",
            config.loss_mode, dataset.task_mode
        )));
    }
    let num_labels = params.shape().num_labels;
    if dataset.num_relations() > num_labels {
        return Err(GnnError::Shape(format!(
            "dataset has {} labels, head scores {num_labels}",
            dataset.num_relations()
        )));
    }
    for &i in train_pairs {
        let p = &dataset.pairs[i];
        feature(features, p.u)?;
        feature(features, p.v)?;
    }

    let mut params = params;
    let mut optimizer = AdamW::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train_pairs.to_vec();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let instances: Vec<TrainingInstance<'_>> = batch
                .iter()
                .map(|&i| {
                    let p = &dataset.pairs[i];
                    let negatives = match config.loss_mode {
                        LossMode::SoftmaxCe => Vec::new(),
                        LossMode::SigmoidBce => sample_negatives(
                            &p.labels,
                            num_labels,
                            config.negatives_per_positive * p.labels.len(),
                            &mut rng,
                        ),
                    };
                    TrainingInstance {
                        u: p.u,
                        v: p.v,
                        f_u: &features[&p.u],
                        f_v: &features[&p.v],
                        labels: &p.labels,
                        negatives,
                        mask_own_edges: config.mask_own_edges,
                    }
                })
                .collect();
            let results: Vec<Result<(f64, Option<GnnParams>)>> = instances
                .par_iter()
                .map(|inst| loss_and_grad(&params, graph, inst, config.loss_mode, true))
                .collect();
            let mut grad = params.zeros_like();
            for r in results {
                let (loss, g) = r?;
                epoch_loss += loss;
                grad.add_assign(&g.expect("gradient requested"));
            }
            grad.scale(1.0 / batch.len() as f64);
            optimizer.step(
                params.as_mut_slice(),
                grad.as_slice(),
                config.learning_rate,
                config.weight_decay,
            );
        }
        let mean = epoch_loss / order.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(GnnError::Diverged { epoch, loss: mean });
        }
        debug!("epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(TrainReport { params, losses })
}

/// Fraction of `pairs` whose top-scored relation is among their labels.
pub fn training_accuracy(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    dataset: &DdiDataset,
    pairs: &[usize],
    features: &FeatureTable,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GnnError::EmptyTrainSet);
    }
    let hits: Vec<Result<bool>> = pairs
        .par_iter()
        .map(|&i| {
            let p = &dataset.pairs[i];
            let rep = encode_pair(params, graph, p.u, p.v, feature(features, p.u)?, feature(features, p.v)?)?;
            let top = candidate_filter(&score_relations(params, &rep)?, 1)[0];
            Ok(p.labels.contains(&top))
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / pairs.len() as f64)
}
