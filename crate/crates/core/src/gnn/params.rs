use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GnnError, Result, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Hand-computable oracles only.
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnShape {
    /// Propagation depth L.
    pub layers: usize,
    /// Hidden width.
    pub dim: usize,
    /// Text embedding width.
    pub embed_dim: usize,
    /// Relations of the propagation graph, inverses included.
    pub num_relations: usize,
    /// Interaction types scored by the head.
    pub num_labels: usize,
    pub activation: Activation,
}

impl GnnShape {
    fn w_len(&self) -> usize {
        self.layers * self.dim * self.dim
    }
    fn attn_len(&self) -> usize {
        self.layers * self.num_relations * 2 * self.embed_dim
    }
    fn rel_len(&self) -> usize {
        self.layers * self.num_relations * self.dim
    }
    fn score_w_len(&self) -> usize {
        self.num_labels * 2 * self.dim
    }
    fn proj_len(&self) -> usize {
        self.dim * self.embed_dim
    }

    fn off_attn(&self) -> usize {
        self.w_len()
    }
    fn off_rel(&self) -> usize {
        self.off_attn() + self.attn_len()
    }
    fn off_score_w(&self) -> usize {
        self.off_rel() + self.rel_len()
    }
    fn off_score_b(&self) -> usize {
        self.off_score_w() + self.score_w_len()
    }
    fn off_proj(&self) -> usize {
        self.off_score_b() + self.num_labels
    }

    pub fn total_len(&self) -> usize {
        self.off_proj() + self.proj_len()
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.embed_dim == 0 || self.num_labels == 0 {
            return Err(GnnError::Shape(format!("degenerate shape {self:?}")));
        }
        Ok(())
    }
}

/// Learnable parameters of the encoder and the scoring head.
///
/// Layer indices on the accessors are 0-based; layer `l` here is layer
/// `l + 1` of the propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    shape: GnnShape,
    data: Vec<f64>,
}

impl GnnParams {
    pub fn zeros(shape: GnnShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            data: vec![0.0; shape.total_len()],
        })
    }

    /// Glorot-uniform weights, zero head bias, relation embeddings near one.
    pub fn init(shape: GnnShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |slice: &mut [f64], limit: f64| {
            for x in slice {
                *x = rng.random_range(-limit..limit);
            }
        };
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let s = shape;
        let (w, rest) = p.data.split_at_mut(s.w_len());
        fill(w, glorot(s.dim, s.dim));
        let (attn, rest) = rest.split_at_mut(s.attn_len());
        fill(attn, glorot(2 * s.embed_dim, 1));
        let (rel, rest) = rest.split_at_mut(s.rel_len());
        fill(rel, 0.1);
        for x in rel.iter_mut() {
            *x += 1.0;
        }
        let (score_w, rest) = rest.split_at_mut(s.score_w_len());
        fill(score_w, glorot(2 * s.dim, s.num_labels));
        let (_score_b, proj) = rest.split_at_mut(s.num_labels);
        fill(proj, glorot(s.embed_dim, s.dim));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &GnnShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major `dim × dim` propagation matrix of layer `l`.
    pub fn w(&self, l: usize) -> &[f64] {
        let n = self.shape.dim * self.shape.dim;
        &self.data[l * n..(l + 1) * n]
    }
    pub fn w_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.shape.dim * self.shape.dim;
        &mut self.data[l * n..(l + 1) * n]
    }

    /// Attention vector over `[f_u; f_v]` for relation `r` at layer `l`.
    pub fn attn(&self, l: usize, r: usize) -> &[f64] {
        let n = 2 * self.shape.embed_dim;
        let start = self.shape.off_attn() + (l * self.shape.num_relations + r) * n;
        &self.data[start..start + n]
    }
    pub fn attn_mut(&mut self, l: usize, r: usize) -> &mut [f64] {
        let n = 2 * self.shape.embed_dim;
        let start = self.shape.off_attn() + (l * self.shape.num_relations + r) * n;
        &mut self.data[start..start + n]
    }

    /// Relation embedding multiplied into messages along `r` at layer `l`.
    pub fn rel(&self, l: usize, r: usize) -> &[f64] {
        let n = self.shape.dim;
        let start = self.shape.off_rel() + (l * self.shape.num_relations + r) * n;
        &self.data[start..start + n]
    }
    pub fn rel_mut(&mut self, l: usize, r: usize) -> &mut [f64] {
        let n = self.shape.dim;
        let start = self.shape.off_rel() + (l * self.shape.num_relations + r) * n;
        &mut self.data[start..start + n]
    }

    /// Row-major `num_labels × 2·dim` head matrix.
    pub fn score_w(&self) -> &[f64] {
        let s = self.shape.off_score_w();
        &self.data[s..s + self.shape.score_w_len()]
    }
    pub fn score_w_mut(&mut self) -> &mut [f64] {
        let s = self.shape.off_score_w();
        let n = self.shape.score_w_len();
        &mut self.data[s..s + n]
    }

    pub fn score_b(&self) -> &[f64] {
        let s = self.shape.off_score_b();
        &self.data[s..s + self.shape.num_labels]
    }
    pub fn score_b_mut(&mut self) -> &mut [f64] {
        let s = self.shape.off_score_b();
        let n = self.shape.num_labels;
        &mut self.data[s..s + n]
    }

    /// Row-major `dim × embed_dim` projection of text features.
    pub fn feat_proj(&self) -> &[f64] {
        let s = self.shape.off_proj();
        &self.data[s..s + self.shape.proj_len()]
    }
    pub fn feat_proj_mut(&mut self) -> &mut [f64] {
        let s = self.shape.off_proj();
        let n = self.shape.proj_len();
        &mut self.data[s..s + n]
    }

    /// Human-readable name of a flat coordinate, for diagnostics.
    pub fn describe_coordinate(&self, i: usize) -> String {
        let s = &self.shape;
        if i < s.off_attn() {
            format!("W[{}]", i / (s.dim * s.dim))
        } else if i < s.off_rel() {
            let k = (i - s.off_attn()) / (2 * s.embed_dim);
            format!("attn[layer {}, rel {}]", k / s.num_relations, k % s.num_relations)
        } else if i < s.off_score_w() {
            let k = (i - s.off_rel()) / s.dim;
            format!("rel[layer {}, rel {}]", k / s.num_relations, k % s.num_relations)
        } else if i < s.off_score_b() {
            "score_w".into()
        } else if i < s.off_proj() {
            "score_b".into()
        } else {
            "feat_proj".into()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &GnnParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }
}

const CHECKPOINT_FORMAT: &str = "casebook-gnn";
const CHECKPOINT_VERSION: u32 = 1;

/// Parameter checkpoint: shape header, flat tensor data, and the training
/// config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: GnnParams,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(params: GnnParams, train_config: Option<TrainConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params,
            train_config,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, json).map_err(|e| GnnError::Checkpoint {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |detail: String| GnnError::Checkpoint {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        if ck.params.data.len() != ck.params.shape.total_len() {
            return Err(err(format!(
                "tensor data has {} values, shape needs {}",
                ck.params.data.len(),
                ck.params.shape.total_len()
            )));
        }
        Ok(ck)
    }
}
