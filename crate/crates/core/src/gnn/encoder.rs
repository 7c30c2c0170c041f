use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GnnError, GnnParams, Result};
use crate::embedding::{cosine, TextEmbedding};
use crate::graph::{flow_layers_masked, EntityId, FlowEdge, FlowLayers, KnowledgeGraph, RelationId};

/// Pair representation `[h_{u,v}; h_{v,u}]`, length `2 · dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairRepresentation(pub Vec<f64>);

impl PairRepresentation {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn raw_attention(params: &GnnParams, l: usize, r: RelationId, f_u: &[f64], f_v: &[f64]) -> f64 {
    let w = params.attn(l, r.index());
    let e = f_u.len();
    let dot: f64 = w[..e].iter().zip(f_u).map(|(a, b)| a * b).sum::<f64>()
        + w[e..].iter().zip(f_v).map(|(a, b)| a * b).sum::<f64>();
    sigmoid(dot)
}

/// Query-conditioned weight of relation `r` at propagation layer `layer`
/// (1-based): the logistic sigmoid of the attention vector dotted with
/// `[f_u; f_v]`. The encoder and the path extractor share it.
pub fn attention_weight(
    params: &GnnParams,
    r: RelationId,
    layer: usize,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
) -> f64 {
    assert!(
        layer >= 1 && layer <= params.shape().layers,
        "layer {layer} outside 1..={}",
        params.shape().layers
    );
    raw_attention(params, layer - 1, r, f_u.values(), f_v.values())
}

/// Attention values for every (layer, relation) touched by one encoding.
struct AttentionCache<'a> {
    params: &'a GnnParams,
    f_u: &'a [f64],
    f_v: &'a [f64],
    values: HashMap<(usize, RelationId), f64>,
}

impl<'a> AttentionCache<'a> {
    fn get(&mut self, l: usize, r: RelationId) -> f64 {
        let (params, f_u, f_v) = (self.params, self.f_u, self.f_v);
        *self
            .values
            .entry((l, r))
            .or_insert_with(|| raw_attention(params, l, r, f_u, f_v))
    }
}

/// Forward activations of one propagation direction, kept for backprop.
struct DirectionTrace {
    /// `h[l][i]`: state of node `i` of layer `l`.
    h: Vec<Vec<Vec<f64>>>,
    /// Aggregated messages per node, `m[0]` unused.
    m: Vec<Vec<Vec<f64>>>,
    /// Pre-activations `W m`, `z[0]` unused.
    z: Vec<Vec<Vec<f64>>>,
    /// `edges[l]`: edges from layer `l − 1` into layer `l`.
    edges: Vec<Vec<FlowEdge>>,
}

impl DirectionTrace {
    fn output(&self) -> &[f64] {
        let last = self.h.last().expect("at least one layer");
        &last[0]
    }
}

fn matvec(mat: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &mat[i * cols..(i + 1) * cols];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn propagate(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    flow: &FlowLayers,
    source_feature: &[f64],
    attention: &mut AttentionCache<'_>,
) -> DirectionTrace {
    let shape = params.shape();
    let dim = shape.dim;
    let depth = flow.depth();
    let mut h0 = vec![0.0; dim];
    matvec(params.feat_proj(), dim, shape.embed_dim, source_feature, &mut h0);

    let mut trace = DirectionTrace {
        h: vec![vec![h0]],
        m: vec![Vec::new()],
        z: vec![Vec::new()],
        edges: vec![Vec::new()],
    };
    for l in 1..=depth {
        let n = flow.layer(l).len();
        let edges = flow.edges_into(graph, l);
        let mut m = vec![vec![0.0; dim]; n];
        {
            let prev = &trace.h[l - 1];
            for e in &edges {
                let alpha = attention.get(l - 1, e.relation);
                let rel = params.rel(l - 1, e.relation.index());
                let src = &prev[e.source];
                let acc = &mut m[e.target];
                for k in 0..dim {
                    acc[k] += alpha * (src[k] * rel[k]);
                }
            }
        }
        let w = params.w(l - 1);
        let mut z = vec![vec![0.0; dim]; n];
        let mut h = vec![vec![0.0; dim]; n];
        for i in 0..n {
            matvec(w, dim, dim, &m[i], &mut z[i]);
            for k in 0..dim {
                h[i][k] = shape.activation.apply(z[i][k]);
            }
        }
        trace.h.push(h);
        trace.m.push(m);
        trace.z.push(z);
        trace.edges.push(edges);
    }
    trace
}

fn check_inputs(params: &GnnParams, graph: &KnowledgeGraph, f_u: &TextEmbedding, f_v: &TextEmbedding) -> Result<()> {
    let s = params.shape();
    if f_u.dim() != s.embed_dim || f_v.dim() != s.embed_dim {
        return Err(GnnError::Shape(format!(
            "features have dims {}/{}, parameters expect {}",
            f_u.dim(),
            f_v.dim(),
            s.embed_dim
        )));
    }
    if graph.num_relations() > s.num_relations {
        return Err(GnnError::Shape(format!(
            "graph has {} relations, parameters cover {}",
            graph.num_relations(),
            s.num_relations
        )));
    }
    Ok(())
}

struct PairTrace {
    forward: DirectionTrace,
    reverse: DirectionTrace,
    alpha: HashMap<(usize, RelationId), f64>,
}

fn encode_traced(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
    mask: Option<(EntityId, EntityId)>,
) -> Result<PairTrace> {
    if u == v {
        return Err(GnnError::SamePair);
    }
    check_inputs(params, graph, f_u, f_v)?;
    let depth = params.shape().layers;
    let flow_uv = flow_layers_masked(graph, u, v, depth, mask)?;
    let flow_vu = flow_layers_masked(graph, v, u, depth, mask)?;
    let mut attention = AttentionCache {
        params,
        f_u: f_u.values(),
        f_v: f_v.values(),
        values: HashMap::new(),
    };
    let forward = propagate(params, graph, &flow_uv, f_u.values(), &mut attention);
    let reverse = propagate(params, graph, &flow_vu, f_v.values(), &mut attention);
    Ok(PairTrace {
        forward,
        reverse,
        alpha: attention.values,
    })
}

/// Encodes the pair by propagating from `u` toward `v` and from `v` toward
/// `u` through their flow layers, returning the two final target states.
pub fn encode_pair(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
) -> Result<PairRepresentation> {
    encode_pair_masked(params, graph, u, v, f_u, f_v, None)
}

/// [`encode_pair`] with the interaction edges between `mask`'s two entities
/// hidden.
pub fn encode_pair_masked(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
    mask: Option<(EntityId, EntityId)>,
) -> Result<PairRepresentation> {
    let trace = encode_traced(params, graph, u, v, f_u, f_v, mask)?;
    let mut out = trace.forward.output().to_vec();
    out.extend_from_slice(trace.reverse.output());
    Ok(PairRepresentation(out))
}

/// `score_w · h_p + score_b`.
pub fn score_relations(params: &GnnParams, rep: &PairRepresentation) -> Result<Vec<f64>> {
    let s = params.shape();
    if rep.0.len() != 2 * s.dim {
        return Err(GnnError::Shape(format!(
            "representation has length {}, head expects {}",
            rep.0.len(),
            2 * s.dim
        )));
    }
    let mut logits = vec![0.0; s.num_labels];
    matvec(params.score_w(), s.num_labels, 2 * s.dim, &rep.0, &mut logits);
    for (z, b) in logits.iter_mut().zip(params.score_b()) {
        *z += b;
    }
    Ok(logits)
}

/// Top-`n` relation ids by logit, ties to the smaller id.
pub fn candidate_filter(logits: &[f64], n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..logits.len()).collect();
    ids.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    ids.truncate(n.min(logits.len()));
    ids
}

/// Cosine similarity of two pair representations; 0 when either is zero.
pub fn struct_sim(a: &PairRepresentation, b: &PairRepresentation) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(GnnError::Shape(format!(
            "representations of length {} and {}",
            a.0.len(),
            b.0.len()
        )));
    }
    Ok(cosine(&a.0, &b.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Softmax cross-entropy against the single true label.
    SoftmaxCe,
    /// Binary cross-entropy over the true labels and sampled negatives.
    SigmoidBce,
}

/// One supervised example.
#[derive(Debug, Clone)]
pub struct TrainingInstance<'a> {
    pub u: EntityId,
    pub v: EntityId,
    pub f_u: &'a TextEmbedding,
    pub f_v: &'a TextEmbedding,
    pub labels: &'a [usize],
    /// Negative relations for [`LossMode::SigmoidBce`].
    pub negatives: Vec<usize>,
    /// Hide the pair's own interaction edges while encoding it.
    pub mask_own_edges: bool,
}

fn head_loss(logits: &[f64], labels: &[usize], negatives: &[usize], mode: LossMode) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; logits.len()];
    match mode {
        LossMode::SoftmaxCe => {
            let target = labels[0];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            for (g, z) in grad.iter_mut().zip(logits) {
                *g = (z - lse).exp();
            }
            grad[target] -= 1.0;
            (lse - logits[target], grad)
        }
        LossMode::SigmoidBce => {
            let count = (labels.len() + negatives.len()) as f64;
            let mut loss = 0.0;
            let mut add = |idx: usize, y: f64| {
                let z = logits[idx];
                // softplus(z) − y·z
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                loss += softplus - y * z;
                grad[idx] += (sigmoid(z) - y) / count;
            };
            for &l in labels {
                add(l, 1.0);
            }
            for &n in negatives {
                add(n, 0.0);
            }
            (loss / count, grad)
        }
    }
}

fn backprop_direction(
    params: &GnnParams,
    trace: &DirectionTrace,
    g_out: &[f64],
    source_feature: &[f64],
    alpha: &HashMap<(usize, RelationId), f64>,
    d_alpha: &mut HashMap<(usize, RelationId), f64>,
    grads: &mut GnnParams,
) {
    let shape = *params.shape();
    let dim = shape.dim;
    let depth = trace.h.len() - 1;
    let mut g_h: Vec<Vec<f64>> = vec![g_out.to_vec()];
    for l in (1..=depth).rev() {
        let n = trace.h[l].len();
        let w = params.w(l - 1);
        let mut g_m = vec![vec![0.0; dim]; n];
        {
            let dw = grads.w_mut(l - 1);
            for i in 0..n {
                let gz: Vec<f64> = (0..dim)
                    .map(|k| g_h[i][k] * shape.activation.derivative(trace.z[l][i][k]))
                    .collect();
                if gz.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let m = &trace.m[l][i];
                for r in 0..dim {
                    for c in 0..dim {
                        dw[r * dim + c] += gz[r] * m[c];
                    }
                }
                for c in 0..dim {
                    let mut acc = 0.0;
                    for r in 0..dim {
                        acc += w[r * dim + c] * gz[r];
                    }
                    g_m[i][c] = acc;
                }
            }
        }
        let prev = &trace.h[l - 1];
        let mut g_prev = vec![vec![0.0; dim]; prev.len()];
        for e in &trace.edges[l] {
            let gm = &g_m[e.target];
            if gm.iter().all(|&x| x == 0.0) {
                continue;
            }
            let a = alpha[&(l - 1, e.relation)];
            let rel = params.rel(l - 1, e.relation.index()).to_vec();
            let src = &prev[e.source];
            let mut da = 0.0;
            {
                let drel = grads.rel_mut(l - 1, e.relation.index());
                for k in 0..dim {
                    da += gm[k] * src[k] * rel[k];
                    drel[k] += a * gm[k] * src[k];
                }
            }
            for k in 0..dim {
                g_prev[e.source][k] += a * gm[k] * rel[k];
            }
            *d_alpha.entry((l - 1, e.relation)).or_insert(0.0) += da;
        }
        g_h = g_prev;
    }
    // layer 0 holds only the source: h0 = feat_proj · f
    let g0 = &g_h[0];
    let e = shape.embed_dim;
    let dproj = grads.feat_proj_mut();
    for r in 0..dim {
        if g0[r] == 0.0 {
            continue;
        }
        for c in 0..e {
            dproj[r * e + c] += g0[r] * source_feature[c];
        }
    }
}

/// Loss of one instance and, if requested, its gradient with respect to every
/// parameter, by reverse accumulation through the head and both propagation
/// directions.
pub fn loss_and_grad(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    inst: &TrainingInstance<'_>,
    mode: LossMode,
    want_grad: bool,
) -> Result<(f64, Option<GnnParams>)> {
    let mask = inst.mask_own_edges.then_some((inst.u, inst.v));
    let trace = encode_traced(params, graph, inst.u, inst.v, inst.f_u, inst.f_v, mask)?;
    let mut hp = trace.forward.output().to_vec();
    hp.extend_from_slice(trace.reverse.output());
    let rep = PairRepresentation(hp);
    let logits = score_relations(params, &rep)?;
    let (loss, g_logits) = head_loss(&logits, inst.labels, &inst.negatives, mode);
    if !want_grad {
        return Ok((loss, None));
    }

    let shape = *params.shape();
    let two_d = 2 * shape.dim;
    let mut grads = params.zeros_like();
    let mut g_hp = vec![0.0; two_d];
    {
        let sw = params.score_w();
        let dsw = grads.score_w_mut();
        for (c, &g) in g_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for j in 0..two_d {
                dsw[c * two_d + j] += g * rep.0[j];
                g_hp[j] += sw[c * two_d + j] * g;
            }
        }
    }
    for (db, g) in grads.score_b_mut().iter_mut().zip(&g_logits) {
        *db += g;
    }

    let mut d_alpha = HashMap::new();
    let (g_fwd, g_rev) = g_hp.split_at(shape.dim);
    backprop_direction(params, &trace.forward, g_fwd, inst.f_u.values(), &trace.alpha, &mut d_alpha, &mut grads);
    backprop_direction(params, &trace.reverse, g_rev, inst.f_v.values(), &trace.alpha, &mut d_alpha, &mut grads);

    let e = shape.embed_dim;
    let mut keys: Vec<_> = d_alpha.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let da = d_alpha[&key];
        let a = trace.alpha[&key];
        let dz = da * a * (1.0 - a);
        let dattn = grads.attn_mut(key.0, key.1.index());
        for (k, x) in inst.f_u.values().iter().enumerate() {
            dattn[k] += dz * x;
        }
        for (k, x) in inst.f_v.values().iter().enumerate() {
            dattn[e + k] += dz * x;
        }
    }
    Ok((loss, Some(grads)))
}
