//! Knowledge-graph storage, DDI datasets, emerging-drug splits and the
//! layered corridors that the encoder and path extractor walk over.
//!
//! A [`KnowledgeGraph`] is loaded from a tab-separated triple file and is
//! immutable afterwards. [`KnowledgeGraph::merge_for_propagation`] produces the
//! graph the encoder actually runs on: biomedical triples, training DDI
//! triples, and an inverse edge for every one of them.

mod dataset;
mod flow;
mod split;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{DdiDataset, DdiPair, TaskMode};
pub use flow::{flow_layers, flow_layers_masked, FlowEdge, FlowLayers};
pub use split::{make_splits, SplitName, SplitSpec};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} tab-separated columns, found {found}")]
    Columns {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("entity {0} is not in the graph")]
    UnknownEntity(u32),
    #[error("unknown drug name {0:?}")]
    UnknownDrug(String),
    #[error("invalid split request: {0}")]
    Split(String),
    #[error("depth must be at least 1")]
    ZeroDepth,
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Dense entity index, assigned in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index into a graph's relation vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Drug,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub kind: EntityKind,
}

/// Name ↔ id table shared by the triple loader and the dataset loader, so a
/// drug named in both files resolves to one entity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRegistry {
    entities: Vec<Entity>,
    #[serde(skip)]
    by_name: HashMap<String, EntityId>,
}

impl EntityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, registering it if unseen. A later `Drug`
    /// registration upgrades an entity first seen as `Other`.
    pub fn intern(&mut self, name: &str, kind: EntityKind) -> EntityId {
        if let Some(&id) = self.by_name.get(name) {
            if kind == EntityKind::Drug {
                self.entities[id.index()].kind = EntityKind::Drug;
            }
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity {
            id,
            name: name.to_string(),
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.index()).map(|e| e.name.as_str())
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.index())
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.by_name = self
            .entities
            .iter()
            .map(|e| (e.name.clone(), e.id))
            .collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationSource {
    /// Biomedical KG relation.
    Kg,
    /// Interaction type; carries the label id in the DDI dataset.
    Ddi(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInfo {
    pub name: String,
    pub source: RelationSource,
    pub inverse: bool,
}

/// Entity/relation-indexed multigraph with forward and reverse adjacency.
///
/// Entity names live in the [`EntityRegistry`]; the graph only knows how many
/// entities exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    num_entities: usize,
    relations: Vec<RelationInfo>,
    /// Number of non-inverse relations; inverse of `r` is `r + base` once
    /// inverses have been synthesized.
    base_relations: usize,
    has_inverses: bool,
    triples: Vec<Triple>,
    #[serde(skip)]
    out_adj: Vec<Vec<(RelationId, EntityId)>>,
    #[serde(skip)]
    in_adj: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    fn build(
        num_entities: usize,
        relations: Vec<RelationInfo>,
        base_relations: usize,
        has_inverses: bool,
        mut triples: Vec<Triple>,
    ) -> Self {
        triples.sort_unstable();
        triples.dedup();
        let mut graph = Self {
            num_entities,
            relations,
            base_relations,
            has_inverses,
            triples,
            out_adj: Vec::new(),
            in_adj: Vec::new(),
        };
        graph.rebuild_adjacency();
        graph
    }

    /// Restores adjacency lists after deserialization.
    pub fn rebuild_adjacency(&mut self) {
        let mut out_adj = vec![Vec::new(); self.num_entities];
        let mut in_adj = vec![Vec::new(); self.num_entities];
        for t in &self.triples {
            out_adj[t.head.index()].push((t.relation, t.tail));
            in_adj[t.tail.index()].push((t.relation, t.head));
        }
        for list in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            list.sort_unstable();
        }
        self.out_adj = out_adj;
        self.in_adj = in_adj;
    }

    /// Loads `head<TAB>relation<TAB>tail` lines. Blank and `#` lines are
    /// skipped; exact duplicate triples collapse to one.
    pub fn load_triples(path: impl AsRef<Path>, registry: &mut EntityRegistry) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_triples(&text, registry)
    }

    pub fn parse_triples(text: &str, registry: &mut EntityRegistry) -> Result<Self> {
        let mut relation_ids: HashMap<&str, RelationId> = HashMap::new();
        let mut relations = Vec::new();
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(GraphError::Columns {
                    line: lineno + 1,
                    expected: 3,
                    found: cols.len(),
                });
            }
            if cols.iter().any(|c| c.trim().is_empty()) {
                return Err(GraphError::Invalid {
                    line: lineno + 1,
                    message: "empty column".into(),
                });
            }
            let head = registry.intern(cols[0], EntityKind::Other);
            let relation = *relation_ids.entry(cols[1]).or_insert_with(|| {
                relations.push(RelationInfo {
                    name: cols[1].to_string(),
                    source: RelationSource::Kg,
                    inverse: false,
                });
                RelationId(relations.len() as u32 - 1)
            });
            let tail = registry.intern(cols[2], EntityKind::Other);
            triples.push(Triple {
                head,
                relation,
                tail,
            });
        }
        let base = relations.len();
        Ok(Self::build(registry.len(), relations, base, false, triples))
    }

    /// Builds the propagation graph: KG triples, the DDI triples of
    /// `train_pairs` (one per label), and the inverse of every triple.
    ///
    /// Pairs outside `train_pairs` never contribute edges.
    pub fn merge_for_propagation(
        &self,
        registry: &EntityRegistry,
        dataset: &DdiDataset,
        train_pairs: &[usize],
    ) -> Self {
        let kg_relations: Vec<&RelationInfo> =
            self.relations[..self.base_relations].iter().collect();
        let mut relations: Vec<RelationInfo> = kg_relations.into_iter().cloned().collect();
        let ddi_offset = relations.len() as u32;
        relations.extend(
            dataset
                .relation_names
                .iter()
                .enumerate()
                .map(|(i, name)| RelationInfo {
                    name: name.clone(),
                    source: RelationSource::Ddi(i as u32),
                    inverse: false,
                }),
        );
        let base = relations.len();
        let inverses: Vec<RelationInfo> = relations
            .iter()
            .map(|r| RelationInfo {
                name: r.name.clone(),
                source: r.source,
                inverse: true,
            })
            .collect();
        relations.extend(inverses);

        let mut forward: Vec<Triple> = self
            .triples
            .iter()
            .filter(|t| t.relation.index() < self.base_relations)
            .copied()
            .collect();
        for &idx in train_pairs {
            let pair = &dataset.pairs[idx];
            for &label in &pair.labels {
                forward.push(Triple {
                    head: pair.u,
                    relation: RelationId(ddi_offset + label as u32),
                    tail: pair.v,
                });
            }
        }
        let mut all = Vec::with_capacity(forward.len() * 2);
        for t in forward {
            all.push(t);
            all.push(Triple {
                head: t.tail,
                relation: RelationId(t.relation.0 + base as u32),
                tail: t.head,
            });
        }
        let num_entities = registry.len().max(self.num_entities);
        Self::build(num_entities, relations, base, true, all)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relations excluding synthesized inverses.
    pub fn num_base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn relation(&self, r: RelationId) -> Option<&RelationInfo> {
        self.relations.get(r.index())
    }

    pub fn relations(&self) -> &[RelationInfo] {
        &self.relations
    }

    pub fn has_inverses(&self) -> bool {
        self.has_inverses
    }

    /// Inverse relation id; `None` before merging.
    pub fn inverse(&self, r: RelationId) -> Option<RelationId> {
        if !self.has_inverses || r.index() >= self.relations.len() {
            return None;
        }
        let base = self.base_relations as u32;
        Some(if r.0 < base {
            RelationId(r.0 + base)
        } else {
            RelationId(r.0 - base)
        })
    }

    pub fn contains(&self, e: EntityId) -> bool {
        e.index() < self.num_entities
    }

    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adj[e.index()]
    }

    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_adj[e.index()]
    }

    pub fn is_ddi_relation(&self, r: RelationId) -> bool {
        matches!(
            self.relations.get(r.index()).map(|i| i.source),
            Some(RelationSource::Ddi(_))
        )
    }

    pub fn has_edge(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.out_adj
            .get(head.index())
            .is_some_and(|l| l.binary_search(&(relation, tail)).is_ok())
    }
}
