use std::collections::{HashMap, VecDeque};

use super::{EntityId, GraphError, KnowledgeGraph, RelationId, Result};

/// Layered corridor between `u` and `v`: layer ℓ holds the entities at
/// breadth-first distance ℓ from `u` and `L − ℓ` to `v`. The end layers are
/// fixed to `{u}` and `{v}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowLayers {
    layers: Vec<Vec<EntityId>>,
    position: HashMap<EntityId, (usize, usize)>,
    excluded_pair: Option<(EntityId, EntityId)>,
}

/// One edge between consecutive layers, as local indices into those layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEdge {
    pub source: usize,
    pub relation: RelationId,
    pub target: usize,
}

impl FlowLayers {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &[EntityId] {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Vec<EntityId>] {
        &self.layers
    }

    /// Layer index and position within it, if `e` is on the corridor.
    pub fn locate(&self, e: EntityId) -> Option<(usize, usize)> {
        self.position.get(&e).copied()
    }

    /// True when some interior layer is empty, i.e. no length-L corridor path.
    pub fn is_broken(&self) -> bool {
        self.layers.iter().any(|l| l.is_empty())
    }

    /// Edges from layer `l − 1` into layer `l`, ordered by target then by
    /// (relation, source entity).
    pub fn edges_into(&self, graph: &KnowledgeGraph, l: usize) -> Vec<FlowEdge> {
        assert!(l >= 1 && l < self.layers.len());
        let mut edges = Vec::new();
        for (target, &e) in self.layers[l].iter().enumerate() {
            for &(r, src) in graph.in_edges(e) {
                if self.is_excluded(graph, src, r, e) {
                    continue;
                }
                if let Some((sl, source)) = self.locate(src) {
                    if sl == l - 1 {
                        edges.push(FlowEdge {
                            source,
                            relation: r,
                            target,
                        });
                    }
                }
            }
        }
        edges
    }

    fn is_excluded(&self, graph: &KnowledgeGraph, a: EntityId, r: RelationId, b: EntityId) -> bool {
        excluded(self.excluded_pair, graph, a, r, b)
    }
}

fn excluded(
    pair: Option<(EntityId, EntityId)>,
    graph: &KnowledgeGraph,
    a: EntityId,
    r: RelationId,
    b: EntityId,
) -> bool {
    match pair {
        Some((x, y)) => ((a == x && b == y) || (a == y && b == x)) && graph.is_ddi_relation(r),
        None => false,
    }
}

pub fn flow_layers(graph: &KnowledgeGraph, u: EntityId, v: EntityId, depth: usize) -> Result<FlowLayers> {
    flow_layers_masked(graph, u, v, depth, None)
}

/// Like [`flow_layers`], ignoring interaction edges directly between the two
/// entities of `excluded_pair`. Training uses this so a pair's own label edge
/// is not visible while it is being scored.
pub fn flow_layers_masked(
    graph: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
    depth: usize,
    excluded_pair: Option<(EntityId, EntityId)>,
) -> Result<FlowLayers> {
    if depth == 0 {
        return Err(GraphError::ZeroDepth);
    }
    for e in [u, v] {
        if !graph.contains(e) {
            return Err(GraphError::UnknownEntity(e.0));
        }
    }
    let from_u = bounded_bfs(graph, u, depth, Direction::Forward, excluded_pair);
    let to_v = bounded_bfs(graph, v, depth, Direction::Backward, excluded_pair);

    let mut layers = vec![Vec::new(); depth + 1];
    layers[0].push(u);
    layers[depth].push(v);
    for (&e, &du) in &from_u {
        if du == 0 || du >= depth {
            continue;
        }
        if to_v.get(&e) == Some(&(depth - du)) {
            layers[du].push(e);
        }
    }
    for layer in layers.iter_mut() {
        layer.sort_unstable();
    }
    let mut position = HashMap::new();
    for (l, layer) in layers.iter().enumerate() {
        for (i, &e) in layer.iter().enumerate() {
            position.entry(e).or_insert((l, i));
        }
    }
    Ok(FlowLayers {
        layers,
        position,
        excluded_pair,
    })
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

fn bounded_bfs(
    graph: &KnowledgeGraph,
    start: EntityId,
    limit: usize,
    dir: Direction,
    excluded_pair: Option<(EntityId, EntityId)>,
) -> HashMap<EntityId, usize> {
    let mut dist = HashMap::new();
    dist.insert(start, 0usize);
    let mut queue = VecDeque::from([start]);
    while let Some(e) = queue.pop_front() {
        let d = dist[&e];
        if d == limit {
            continue;
        }
        let edges = match dir {
            Direction::Forward => graph.out_edges(e),
            Direction::Backward => graph.in_edges(e),
        };
        for &(r, next) in edges {
            let (a, b) = match dir {
                Direction::Forward => (e, next),
                Direction::Backward => (next, e),
            };
            if excluded(excluded_pair, graph, a, r, b) {
                continue;
            }
            if !dist.contains_key(&next) {
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    dist
}
