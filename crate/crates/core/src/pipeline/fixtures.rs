//! Synthetic datasets with known answers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataBundle, DataPaths, Engine, PipelineConfig, PipelineError, Result};
use crate::embedding::{Embedder, TextEmbedding};
use crate::gateway::{ChatClient, ChatClientConfig, MockDefault, MockPolicy, MockRule};
use crate::gnn::{PairRepresentation, TrainConfig};
use crate::graph::{make_splits, EntityId, TaskMode};
use crate::repository::{Case, CaseDrug, LabeledQuery, RefinementConfig, Repository, RetrievalQuery};

/// Interaction types of the planted fixture. No two share a word, so a
/// wrong answer can never be repaired into a right one.
pub const PLANTED_LABELS: [&str; 3] = ["serum concentration raised", "additive sedation", "bleeding hazard"];
const PLANTED_RELATIONS: [&str; 3] = ["inhibits", "potentiates", "displaces"];

/// Marker the mock writes into mechanisms of `label` and later reads back.
pub fn planted_marker(label: usize) -> String {
    format!("planted-marker-{}", ["alpha", "beta", "gamma"][label])
}

#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub kg: String,
    pub ddi: String,
    pub config: PipelineConfig,
}

/// 200 pairs over 400 drugs, each drug in exactly one pair. A pair with
/// label `c` is joined by the corridor `u -r_c-> a -bridge-> b <-r_c- v`,
/// so the corridor relation identifies the label and every pair of a label
/// has the same neighbourhood shape. Drug descriptions are all the same.
///
/// The mock writes a label-specific marker into distilled mechanisms and
/// answers a prediction with the label whose marker appears first in the
/// prompt. With cases, the first case is the most similar one, which has
/// the query's label; without cases the mock falls back to label 0.
pub fn planted_signal(seed: u64) -> PlantedFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
    labels.shuffle(&mut rng);
    let mut kg = String::from("# head\trelation\ttail\n");
    let mut ddi = String::from("# drug_a\tdrug_b\tlabel\n");
    for (i, &c) in labels.iter().enumerate() {
        let (u, v) = (format!("drug-{:03}", 2 * i), format!("drug-{:03}", 2 * i + 1));
        let (a, b) = (format!("node-{i:03}-a"), format!("node-{i:03}-b"));
        let r = PLANTED_RELATIONS[c];
        kg.push_str(&format!("{u}\t{r}\t{a}\n{a}\tbridge\t{b}\n{v}\t{r}\t{b}\n"));
        ddi.push_str(&format!("{u}\t{v}\t{}\n", PLANTED_LABELS[c]));
    }
    let mut rules = Vec::new();
    for (c, name) in PLANTED_LABELS.iter().enumerate() {
        rules.push(MockRule {
            pattern: (*name).to_string(),
            description: None,
            mechanism: Some(format!(
                "Shared pathway {} leads to {name}.",
                planted_marker(c)
            )),
            label: None,
        });
    }
    for (c, name) in PLANTED_LABELS.iter().enumerate() {
        rules.push(MockRule {
            pattern: planted_marker(c),
            description: None,
            mechanism: Some(format!("Follows the reference case ({}).", planted_marker(c))),
            label: Some((*name).to_string()),
        });
    }
    let policy = MockPolicy {
        rules,
        default: MockDefault {
            description: "A small-molecule drug.".into(),
            mechanism: "No mechanism identified.".into(),
            label: Some(PLANTED_LABELS[0].into()),
        },
    };
    let config = PipelineConfig {
        hidden_dim: 8,
        init_fraction: 0.5,
        seed,
        train: TrainConfig {
            epochs: 30,
            learning_rate: 0.02,
            seed,
            ..TrainConfig::default()
        },
        gateway: ChatClientConfig::Mock {
            policy,
            policy_path: None,
        },
        embedding: crate::embedding::EmbeddingConfig::hashed(16),
        paths: DataPaths {
            kg: Some("kg.tsv".into()),
            dataset: Some("ddi.tsv".into()),
            bundle: None,
            splits: Some("splits.json".into()),
            checkpoint: Some("gnn.json".into()),
            repository: Some("repository.jsonl".into()),
        },
        ..PipelineConfig::default()
    };
    PlantedFixture { kg, ddi, config }
}

/// Writes `kg.tsv`, `ddi.tsv` and `config.json` into `dir` and returns the
/// config path.
pub fn write_planted(dir: &Path, seed: u64) -> Result<PathBuf> {
    let f = planted_signal(seed);
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    for (name, text) in [("kg.tsv", &f.kg), ("ddi.tsv", &f.ddi)] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| PipelineError::io(&p, e))?;
    }
    let cfg = dir.join("config.json");
    f.config.save(&cfg)?;
    Ok(cfg)
}

/// In-memory engine over the planted fixture with a 20% emerging-drug
/// split; not yet trained.
pub fn planted_engine(seed: u64) -> Result<Engine> {
    let f = planted_signal(seed);
    let bundle = DataBundle::from_text(&f.kg, &f.ddi, TaskMode::Multiclass)?;
    let splits = make_splits(&bundle.dataset, 0.2, 0.0, seed)?;
    let client = ChatClient::from_config(&f.config.gateway)?;
    let embedder = Embedder::new(f.config.embedding.clone())?;
    Engine::new(f.config, bundle, splits, client, embedder)
}

fn unit(v: Vec<f64>) -> TextEmbedding {
    TextEmbedding::new(v).expect("fixture vectors are nonzero")
}

fn synthetic_case(id: String, n: u32, label: usize, sem: Vec<f64>, h: Vec<f64>, mech: Vec<f64>) -> Case {
    Case {
        drugs: [
            CaseDrug {
                name: format!("{id}-u"),
                id: EntityId(2 * n),
            },
            CaseDrug {
                name: format!("{id}-v"),
                id: EntityId(2 * n + 1),
            },
        ],
        case_id: id,
        descriptions: [String::new(), String::new()],
        paths: Vec::new(),
        h_c: PairRepresentation(h),
        mechanism: String::new(),
        labels: vec![label],
        sem_vec: unit(sem),
        mech_vec: unit(mech),
        created_at: 0,
        revised: false,
    }
}

fn query(sem: Vec<f64>, h: Vec<f64>, label: usize) -> LabeledQuery {
    LabeledQuery {
        query: RetrievalQuery {
            sem_vec: unit(sem),
            sem_vec_swapped: None,
            h_p: PairRepresentation(h),
            lambda: 0.5,
            k: 1,
            exclude_pair: None,
        },
        labels: vec![label],
    }
}

/// Number of queries in [`lambda_fixture`].
pub const LAMBDA_QUERIES: usize = 60;

/// Repository and queries on which neither similarity alone retrieves the
/// right case at K = 1, but their even mix does.
///
/// Query `i` owns coordinates `2i` and `2i + 1` of both spaces and sits on
/// `e₂ᵢ`. Its block holds up to three cases:
/// - a match with the query's label at cosine 0.8 in both spaces,
/// - a semantic decoy with another label at cosine 1 semantically and 0
///   structurally,
/// - a structural decoy, the mirror image.
///
/// Every third query has both decoys; the others have only one each, in
/// alternation. At λ = 0 the structural decoy wins wherever present, at
/// λ = 1 the semantic one, and for λ in [0.25, 0.75] the match always scores
/// 0.8 against at most 0.75.
pub fn lambda_fixture() -> (Repository, Vec<LabeledQuery>) {
    let dim = 2 * LAMBDA_QUERIES;
    let axis = |i: usize, a: f64, b: f64| {
        let mut v = vec![0.0; dim];
        v[2 * i] = a;
        v[2 * i + 1] = b;
        v
    };
    let mut repo = Repository::new(TaskMode::Multiclass, RefinementConfig::default()).expect("default config");
    let mut queries = Vec::new();
    let mut n = 0u32;
    for i in 0..LAMBDA_QUERIES {
        let y = i % 4;
        let mut add = |suffix: &str, label: usize, sem: Vec<f64>, h: Vec<f64>| {
            let c = synthetic_case(format!("q{i:03}-{suffix}"), n, label, sem.clone(), h, sem);
            n += 1;
            repo.insert_case(c).expect("unique ids");
        };
        add("match", y, axis(i, 0.8, 0.6), axis(i, 0.8, 0.6));
        let kind = i % 3;
        if kind != 2 {
            add("sem", (y + 1) % 4, axis(i, 1.0, 0.0), axis(i, 0.0, 1.0));
        }
        if kind != 1 {
            add("struct", (y + 2) % 4, axis(i, 0.0, 1.0), axis(i, 1.0, 0.0));
        }
        queries.push(query(axis(i, 1.0, 0.0), axis(i, 1.0, 0.0), y));
    }
    (repo, queries)
}

pub const REFINE_CATEGORIES: usize = 20;
pub const REFINE_CLUSTERS: usize = 25;
pub const REFINE_MEMBERS: usize = 20;
const REFINE_DIM: usize = 64;

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..REFINE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn jitter(center: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    center.iter().map(|c| c + scale * rng.random_range(-1.0..1.0)).collect()
}

/// 10,000 cases in 20 categories, each category made of 25 tight clusters
/// of 20 cases, plus two held-out queries per cluster.
///
/// A cluster's centre is its category centre plus a smaller offset, and
/// members jitter around it by at most 0.01 per coordinate, identically in
/// the semantic, structural and mechanism spaces. Members of a cluster are
/// therefore far closer to each other than to any other cluster, and
/// clusters of one category closer to each other than to other categories.
/// Compaction keeps one medoid per cluster, and a query's five nearest
/// medoids all come from its own category.
pub fn refinement_fixture(seed: u64) -> (Repository, Vec<LabeledQuery>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repo = Repository::new(TaskMode::Multiclass, RefinementConfig::default()).expect("default config");
    let mut queries = Vec::new();
    let mut n = 0u32;
    for cat in 0..REFINE_CATEGORIES {
        let cat_center = random_unit(&mut rng);
        for cl in 0..REFINE_CLUSTERS {
            let offset = random_unit(&mut rng);
            let center: Vec<f64> = cat_center.iter().zip(&offset).map(|(c, o)| c + 0.35 * o).collect();
            for m in 0..REFINE_MEMBERS {
                let sem = jitter(&center, 0.01, &mut rng);
                let h = jitter(&center, 0.01, &mut rng);
                let mech = jitter(&center, 0.01, &mut rng);
                let id = format!("c{cat:02}-k{cl:02}-m{m:02}");
                repo.insert_case(synthetic_case(id, n, cat, sem, h, mech))
                    .expect("unique ids");
                n += 1;
            }
            for _ in 0..2 {
                let mut q = query(jitter(&center, 0.01, &mut rng), jitter(&center, 0.01, &mut rng), cat);
                q.query.k = 5;
                queries.push(q);
            }
        }
    }
    (repo, queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repository::retrieval_majority_accuracy;

    #[test]
    fn lambda_curve_peaks_inside() {
        let (repo, queries) = lambda_fixture();
        let acc = |l: f64| retrieval_majority_accuracy(&repo, &queries, l, 1).unwrap();
        assert!((acc(0.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((acc(1.0) - 1.0 / 3.0).abs() < 1e-12);
        for l in [0.25, 0.5, 0.75] {
            assert_eq!(acc(l), 1.0);
        }
    }

    #[test]
    fn planted_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_planted(dir.path(), 3).unwrap();
        let loaded = PipelineConfig::load(&cfg).unwrap();
        assert_eq!(loaded.paths.kg.unwrap(), dir.path().join("kg.tsv"));
        let text = fs::read_to_string(dir.path().join("ddi.tsv")).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 200);
    }
}
