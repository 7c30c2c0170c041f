//! Attention-scored beam search for relational paths between a drug pair.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::TextEmbedding;
use crate::gnn::{attention_weight, GnnParams};
use crate::graph::{flow_layers_masked, EntityId, EntityRegistry, FlowEdge, GraphError, KnowledgeGraph, Triple};

#[derive(Debug, Error)]
pub enum PathError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = PathError> = std::result::Result<T, E>;

/// A length-L chain of triples from `u` to `v` with its summed attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelPath {
    pub steps: Vec<Triple>,
    pub score: f64,
}

impl RelPath {
    /// Mean attention per hop.
    pub fn average(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.score / self.steps.len() as f64
        }
    }

    /// Path entities in order, `u` first.
    pub fn nodes(&self) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = self.steps.iter().map(|t| t.head).collect();
        if let Some(last) = self.steps.last() {
            out.push(last.tail);
        }
        out
    }
}

/// Score descending, then step triples in lexicographic order.
pub fn path_order(a: &RelPath, b: &RelPath) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.steps.cmp(&b.steps))
}

/// One surviving edge of the beam, scored by its best prefix.
#[derive(Debug, Clone, Copy)]
struct Scored {
    edge: FlowEdge,
    alpha: f64,
    score: f64,
}

/// Top-`beam` length-`depth` paths from `u` to `v`, best first.
pub fn extract_paths(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
    depth: usize,
    beam: usize,
) -> Result<Vec<RelPath>> {
    extract_paths_masked(params, graph, u, v, f_u, f_v, depth, beam, None)
}

/// [`extract_paths`] with the interaction edges between `mask`'s two
/// entities hidden.
///
/// The search walks the flow layers one at a time. At each layer it scores
/// every edge that can still complete a path as the best prefix score at its
/// source plus the edge's attention, and keeps the `beam` best edges. The
/// kept edges of all layers form a small DAG whose complete paths are
/// enumerated, rescored and cut to `beam`. Since every edge that lies on a
/// complete path is a candidate, and a layer never holds more such edges
/// than there are paths, a beam at least as wide as the path count loses
/// nothing.
#[allow(clippy::too_many_arguments)]
pub fn extract_paths_masked(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    f_u: &TextEmbedding,
    f_v: &TextEmbedding,
    depth: usize,
    beam: usize,
    mask: Option<(EntityId, EntityId)>,
) -> Result<Vec<RelPath>> {
    if beam == 0 {
        return Err(PathError::Invalid("beam width must be ≥ 1".into()));
    }
    if depth == 0 || depth > params.shape().layers {
        return Err(PathError::Invalid(format!(
            "depth {depth} outside 1..={}",
            params.shape().layers
        )));
    }
    if u == v {
        return Err(PathError::Invalid("path endpoints must differ".into()));
    }
    let flow = flow_layers_masked(graph, u, v, depth, mask)?;
    if flow.is_broken() {
        return Ok(Vec::new());
    }

    let mut layer_edges: Vec<Vec<FlowEdge>> = vec![Vec::new()];
    for l in 1..=depth {
        layer_edges.push(flow.edges_into(graph, l));
    }
    // drop edges that cannot reach v inside the corridor
    let mut reaches_v = vec![true];
    for l in (1..=depth).rev() {
        let edges = std::mem::take(&mut layer_edges[l]);
        let kept: Vec<FlowEdge> = edges.into_iter().filter(|e| reaches_v[e.target]).collect();
        let mut prev = vec![false; flow.layer(l - 1).len()];
        for e in &kept {
            prev[e.source] = true;
        }
        layer_edges[l] = kept;
        reaches_v = prev;
    }

    let entity = |l: usize, i: usize| flow.layer(l)[i];
    let mut prefix: Vec<Option<f64>> = vec![Some(0.0)];
    let mut kept_layers: Vec<Vec<Scored>> = vec![Vec::new()];
    for l in 1..=depth {
        let mut cands: Vec<Scored> = layer_edges[l]
            .iter()
            .filter_map(|&edge| {
                let base = prefix[edge.source]?;
                let alpha = attention_weight(params, edge.relation, l, f_u, f_v);
                Some(Scored {
                    edge,
                    alpha,
                    score: base + alpha,
                })
            })
            .collect();
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.alpha.total_cmp(&a.alpha))
                .then(entity(l - 1, a.edge.source).cmp(&entity(l - 1, b.edge.source)))
                .then(a.edge.relation.cmp(&b.edge.relation))
                .then(entity(l, a.edge.target).cmp(&entity(l, b.edge.target)))
        });
        cands.truncate(beam);
        let mut next = vec![None; flow.layer(l).len()];
        for c in &cands {
            let slot: &mut Option<f64> = &mut next[c.edge.target];
            if slot.is_none_or(|s| c.score > s) {
                *slot = Some(c.score);
            }
        }
        kept_layers.push(cands);
        prefix = next;
    }

    // keep only beam edges that still lead to v after pruning
    let mut alive = vec![true];
    for l in (1..=depth).rev() {
        kept_layers[l].retain(|c| alive[c.edge.target]);
        let mut prev = vec![false; flow.layer(l - 1).len()];
        for c in &kept_layers[l] {
            prev[c.edge.source] = true;
        }
        alive = prev;
    }

    let mut paths = Vec::new();
    let mut stack: Vec<Triple> = Vec::with_capacity(depth);
    enumerate(flow.layers(), &kept_layers, 1, 0, &mut stack, &mut |steps| {
        let score = steps
            .iter()
            .enumerate()
            .map(|(i, t)| attention_weight(params, t.relation, i + 1, f_u, f_v))
            .fold(0.0, |acc, a| acc + a);
        paths.push(RelPath {
            steps: steps.to_vec(),
            score,
        });
    });
    paths.sort_by(path_order);
    paths.truncate(beam);
    Ok(paths)
}

fn enumerate(
    entities: &[Vec<EntityId>],
    kept: &[Vec<Scored>],
    l: usize,
    at: usize,
    stack: &mut Vec<Triple>,
    emit: &mut impl FnMut(&[Triple]),
) {
    if l == kept.len() {
        emit(stack);
        return;
    }
    for c in kept[l].iter().filter(|c| c.edge.source == at) {
        stack.push(Triple {
            head: entities[l - 1][c.edge.source],
            relation: c.edge.relation,
            tail: entities[l][c.edge.target],
        });
        enumerate(entities, kept, l + 1, c.edge.target, stack, emit);
        stack.pop();
    }
}

/// `A --rel--> B --rel⁻¹--> C`.
pub fn render_path(path: &RelPath, registry: &EntityRegistry, graph: &KnowledgeGraph) -> Result<String> {
    let name = |e: EntityId| registry.name(e).ok_or(PathError::UnknownEntity(e.0));
    let mut out = String::new();
    for (i, t) in path.steps.iter().enumerate() {
        if i == 0 {
            out.push_str(name(t.head)?);
        }
        let rel = graph
            .relation(t.relation)
            .ok_or(PathError::UnknownRelation(t.relation.0))?;
        out.push_str(" --");
        out.push_str(&rel.name);
        if rel.inverse {
            out.push('⁻');
            out.push('¹');
        }
        out.push_str("--> ");
        out.push_str(name(t.tail)?);
    }
    Ok(out)
}
