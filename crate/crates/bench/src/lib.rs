//! Random inputs shared by the benchmarks.

use casebook_core::embedding::TextEmbedding;
use casebook_core::gnn::{Activation, GnnParams, GnnShape, PairRepresentation};
use casebook_core::graph::{DdiDataset, EntityId, EntityRegistry, KnowledgeGraph, TaskMode};
use casebook_core::repository::{Case, CaseDrug, RefinementConfig, Repository, RetrievalQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct World {
    pub graph: KnowledgeGraph,
    pub params: GnnParams,
    pub features: Vec<TextEmbedding>,
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn embedding(rng: &mut ChaCha8Rng, dim: usize) -> TextEmbedding {
    TextEmbedding::new(random_vec(rng, dim)).expect("random vector is nonzero")
}

/// Random KG over `nodes` entities with inverses, plus encoder parameters.
pub fn world(seed: u64, nodes: usize, edges: usize, relations: usize, layers: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for i in 0..nodes {
        // a ring keeps every node connected
        text.push_str(&format!("e{i}\tr0\te{}\n", (i + 1) % nodes));
    }
    for _ in 0..edges {
        let h = rng.random_range(0..nodes);
        let t = rng.random_range(0..nodes);
        let r = rng.random_range(0..relations);
        text.push_str(&format!("e{h}\tr{r}\te{t}\n"));
    }
    let mut registry = EntityRegistry::new();
    let kg = KnowledgeGraph::parse_triples(&text, &mut registry).expect("generated triples parse");
    let empty = DdiDataset::parse("", TaskMode::Multiclass, &mut registry).expect("empty dataset");
    let graph = kg.merge_for_propagation(&registry, &empty, &[]);
    let shape = GnnShape {
        layers,
        dim: 32,
        embed_dim: 64,
        num_relations: graph.num_relations(),
        num_labels: 86,
        activation: Activation::Relu,
    };
    let params = GnnParams::init(shape, seed).expect("valid shape");
    let features = (0..registry.len()).map(|_| embedding(&mut rng, 64)).collect();
    World {
        graph,
        params,
        features,
    }
}

pub fn entity(registry_index: usize) -> EntityId {
    EntityId(registry_index as u32)
}

/// Repository of `n` random cases over `labels` categories.
pub fn repository(seed: u64, n: usize, labels: usize, dim: usize) -> (Repository, RetrievalQuery) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repo = Repository::new(TaskMode::Multiclass, RefinementConfig::default()).expect("default config");
    for i in 0..n {
        let case = Case {
            case_id: format!("case-{i:06}"),
            drugs: [
                CaseDrug {
                    name: format!("d{}", 2 * i),
                    id: EntityId(2 * i as u32),
                },
                CaseDrug {
                    name: format!("d{}", 2 * i + 1),
                    id: EntityId(2 * i as u32 + 1),
                },
            ],
            descriptions: [String::new(), String::new()],
            paths: Vec::new(),
            h_c: PairRepresentation(random_vec(&mut rng, dim)),
            mechanism: String::new(),
            labels: vec![i % labels],
            sem_vec: embedding(&mut rng, dim),
            mech_vec: embedding(&mut rng, dim),
            created_at: 0,
            revised: false,
        };
        repo.insert_case(case).expect("unique ids");
    }
    let query = RetrievalQuery {
        sem_vec: embedding(&mut rng, dim),
        sem_vec_swapped: Some(embedding(&mut rng, dim)),
        h_p: PairRepresentation(random_vec(&mut rng, dim)),
        lambda: 0.5,
        k: 5,
        exclude_pair: None,
    };
    (repo, query)
}

/// `n` random unit vectors.
pub fn points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| embedding(&mut rng, dim).values().to_vec()).collect()
}
