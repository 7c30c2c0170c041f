use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::guard::{LabelGuard, LabelUse};
use super::metrics::{self, ClassMetrics, Outcome};
use super::{PipelineConfig, PipelineError, Result};
use crate::embedding::{Embedder, TextEmbedding};
use crate::gateway::{
    Candidate, CaseRendering, ChatClient, Message, ParseStatus, PromptBundle, DEFAULT_TASK_DESCRIPTION,
};
use crate::gnn::{
    candidate_filter, encode_pair_masked, grad_check, score_relations, train, Checkpoint, FeatureTable,
    GnnParams, GnnShape, GradCheckReport, LossMode, PairRepresentation, TrainReport, TrainingInstance,
};
use crate::graph::{DdiDataset, EntityId, EntityRegistry, KnowledgeGraph, SplitName, SplitSpec, TaskMode};
use crate::paths::{extract_paths_masked, render_path};
use crate::repository::{
    description_text, retrieval_majority_accuracy, Case, CaseDrug, LabeledQuery, Repository, RetrievalQuery,
};

/// Parsed inputs: entity names, the knowledge graph and the DDI dataset.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub registry: EntityRegistry,
    pub kg: KnowledgeGraph,
    pub dataset: DdiDataset,
}

const BUNDLE_FORMAT: &str = "casebook-bundle";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize)]
struct BundleOut<'a> {
    format: &'a str,
    version: u32,
    registry: &'a EntityRegistry,
    kg: &'a KnowledgeGraph,
    dataset: &'a DdiDataset,
}

#[derive(Deserialize)]
struct BundleIn {
    format: String,
    version: u32,
    registry: EntityRegistry,
    kg: KnowledgeGraph,
    dataset: DdiDataset,
}

impl DataBundle {
    pub fn from_text(kg: &str, ddi: &str, mode: TaskMode) -> Result<Self> {
        let mut registry = EntityRegistry::new();
        let kg = KnowledgeGraph::parse_triples(kg, &mut registry)?;
        let dataset = DdiDataset::parse(ddi, mode, &mut registry)?;
        Ok(Self { registry, kg, dataset })
    }

    pub fn from_files(kg: &Path, ddi: &Path, mode: TaskMode) -> Result<Self> {
        let kg_text = fs::read_to_string(kg).map_err(|e| PipelineError::io(kg, e))?;
        let ddi_text = fs::read_to_string(ddi).map_err(|e| PipelineError::io(ddi, e))?;
        Self::from_text(&kg_text, &ddi_text, mode)
    }

    /// Writes the bundle as CBOR.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let doc = BundleOut {
            format: BUNDLE_FORMAT,
            version: BUNDLE_VERSION,
            registry: &self.registry,
            kg: &self.kg,
            dataset: &self.dataset,
        };
        ciborium::into_writer(&doc, &mut out).map_err(|e| PipelineError::Bundle(e.to_string()))?;
        out.flush().map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let doc: BundleIn = ciborium::from_reader(BufReader::new(file))
            .map_err(|e| PipelineError::Bundle(format!("{}: {e}", path.display())))?;
        if doc.format != BUNDLE_FORMAT || doc.version != BUNDLE_VERSION {
            return Err(PipelineError::Bundle(format!(
                "unsupported bundle {:?} version {}",
                doc.format, doc.version
            )));
        }
        let mut registry = doc.registry;
        registry.reindex();
        let mut kg = doc.kg;
        kg.rebuild_adjacency();
        Ok(Self {
            registry,
            kg,
            dataset: doc.dataset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub case_id: String,
    pub score: f64,
    pub semantic: f64,
    pub structural: f64,
}

/// Everything produced for one predicted pair, prompt included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Dataset index, absent for ad-hoc pairs.
    pub pair: Option<usize>,
    pub drugs: (String, String),
    pub truth: Vec<usize>,
    /// GNN candidate relation ids, best first.
    pub candidates: Vec<usize>,
    pub cases: Vec<RetrievedCase>,
    pub paths: Vec<String>,
    pub mechanism: String,
    pub predicted: Vec<usize>,
    pub parse_status: ParseStatus,
    /// Set when the model call failed and the GNN candidates were used.
    pub gateway_error: Option<String>,
    /// Top-1 correctness in multiclass mode.
    pub correct: Option<bool>,
    pub prompt: Vec<Message>,
}

impl PredictionRecord {
    pub fn write_jsonl(records: &[PredictionRecord], path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(out, "{line}").map_err(|e| PipelineError::io(path, e))?;
        }
        out.flush().map_err(|e| PipelineError::io(path, e))
    }
}

/// A pair that could not be predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub task_mode: TaskMode,
    pub evaluated: usize,
    pub failed: usize,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    /// Macro F1 over every label, absent ones scoring 0.
    pub f1_macro_strict: Option<f64>,
    pub recall_at_5: Option<f64>,
    pub ndcg_at_5: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub parse_status: BTreeMap<String, usize>,
    pub label_violations: usize,
    pub config: PipelineConfig,
}

impl MetricsReport {
    /// Accuracy in multiclass mode, Recall@5 in multilabel mode.
    pub fn primary(&self) -> Option<f64> {
        match self.task_mode {
            TaskMode::Multiclass => self.accuracy,
            TaskMode::Multilabel => self.recall_at_5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<PairFailure>,
}

struct PairAnalysis {
    names: (String, String),
    descriptions: (String, String),
    h_p: PairRepresentation,
    paths: Vec<String>,
    logits: Vec<f64>,
}

/// Holds every stage's inputs and runs prediction, repository building and
/// evaluation.
pub struct Engine {
    config: PipelineConfig,
    registry: EntityRegistry,
    dataset: DdiDataset,
    splits: SplitSpec,
    /// KG plus training interactions and inverses.
    graph: KnowledgeGraph,
    params: Option<GnnParams>,
    repository: Option<Repository>,
    client: ChatClient,
    embedder: Embedder,
    guard: LabelGuard,
    descriptions: Mutex<HashMap<EntityId, String>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("pairs", &self.dataset.pairs.len())
            .field("entities", &self.registry.len())
            .field("has_params", &self.params.is_some())
            .field("repository", &self.repository.as_ref().map(Repository::len))
            .finish()
    }
}

impl Engine {
    pub fn new(
        config: PipelineConfig,
        bundle: DataBundle,
        splits: SplitSpec,
        client: ChatClient,
        embedder: Embedder,
    ) -> Result<Self> {
        config.validate()?;
        if bundle.dataset.task_mode != config.task_mode {
            return Err(PipelineError::Config(format!(
                "dataset is {:?} but the config asks for {:?}",
                bundle.dataset.task_mode, config.task_mode
            )));
        }
        splits.validate(&bundle.dataset)?;
        let guard = LabelGuard::new(&splits);
        guard.admit_all(&splits.train)?;
        let graph = bundle
            .kg
            .merge_for_propagation(&bundle.registry, &bundle.dataset, &splits.train);
        Ok(Self {
            config,
            registry: bundle.registry,
            dataset: bundle.dataset,
            splits,
            graph,
            params: None,
            repository: None,
            client,
            embedder,
            guard,
            descriptions: Mutex::new(HashMap::new()),
        })
    }

    /// Loads the bundle (or the raw KG and dataset files) and the splits
    /// named in `config.paths`, plus the checkpoint and repository when
    /// those files exist.
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        let paths = config.paths.clone();
        let bundle = match (&paths.bundle, &paths.kg, &paths.dataset) {
            (Some(b), _, _) if b.exists() => DataBundle::load(b)?,
            (_, Some(kg), Some(ddi)) => DataBundle::from_files(kg, ddi, config.task_mode)?,
            _ => return Err(PipelineError::Missing("paths.bundle, or paths.kg and paths.dataset")),
        };
        let split_path = paths.splits.as_ref().ok_or(PipelineError::Missing("paths.splits"))?;
        let splits = SplitSpec::load(split_path)?;
        let client = ChatClient::from_config(&config.gateway)?;
        let embedder = Embedder::new(config.embedding.clone())?;
        let mut engine = Self::new(config, bundle, splits, client, embedder)?;
        if let Some(p) = paths.checkpoint.as_ref().filter(|p| p.exists()) {
            engine.params = Some(Checkpoint::load(p)?.params);
        }
        if let Some(p) = paths.repository.as_ref().filter(|p| p.exists()) {
            engine.repository = Some(Repository::load(p)?);
        }
        Ok(engine)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: PipelineConfig) -> Result<()> {
        config.validate()?;
        if config.task_mode != self.dataset.task_mode {
            return Err(PipelineError::Config("task mode cannot change".into()));
        }
        self.config = config;
        Ok(())
    }

    pub fn registry(&self) -> &EntityRegistry {
        &self.registry
    }

    pub fn dataset(&self) -> &DdiDataset {
        &self.dataset
    }

    pub fn splits(&self) -> &SplitSpec {
        &self.splits
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn guard(&self) -> &LabelGuard {
        &self.guard
    }

    pub fn params(&self) -> Result<&GnnParams> {
        self.params.as_ref().ok_or(PipelineError::Missing("trained GNN parameters"))
    }

    pub fn set_params(&mut self, params: GnnParams) {
        self.params = Some(params);
    }

    pub fn repository(&self) -> Option<&Repository> {
        self.repository.as_ref()
    }

    pub fn set_repository(&mut self, repo: Repository) {
        self.repository = Some(repo);
    }

    pub fn take_repository(&mut self) -> Option<Repository> {
        self.repository.take()
    }

    fn name(&self, e: EntityId) -> Result<String> {
        self.registry
            .name(e)
            .map(str::to_string)
            .ok_or_else(|| PipelineError::Config(format!("entity {} has no name", e.0)))
    }

    pub fn entity(&self, name: &str) -> Result<EntityId> {
        self.registry
            .get(name)
            .ok_or_else(|| PipelineError::Config(format!("unknown entity {name:?}")))
    }

    /// Generated description of a drug, cached per entity.
    pub fn describe(&self, e: EntityId) -> Result<String> {
        if let Some(d) = self.descriptions.lock().expect("description cache").get(&e) {
            return Ok(d.clone());
        }
        let d = self
            .client
            .generate_description(&self.name(e)?)
            .map_err(|err| PipelineError::stage("describe", err))?;
        self.descriptions.lock().expect("description cache").insert(e, d.clone());
        Ok(d)
    }

    pub fn feature(&self, e: EntityId) -> Result<TextEmbedding> {
        let d = self.describe(e)?;
        self.embedder.embed(&d).map_err(|err| PipelineError::stage("embed", err))
    }

    pub fn feature_table(&self, entities: &[EntityId]) -> Result<FeatureTable> {
        let rows: Vec<Result<(EntityId, TextEmbedding)>> =
            self.in_pool(|| entities.par_iter().map(|&e| Ok((e, self.feature(e)?))).collect())?;
        rows.into_iter().collect()
    }

    fn label_text(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&l| self.dataset.relation_names[l].as_str())
            .collect::<Vec<_>>()
            .join("; ")
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.config.workers {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }

    fn loss_mode(&self) -> LossMode {
        match self.config.task_mode {
            TaskMode::Multiclass => LossMode::SoftmaxCe,
            TaskMode::Multilabel => LossMode::SigmoidBce,
        }
    }

    fn shape(&self, embed_dim: usize) -> GnnShape {
        GnnShape {
            layers: self.config.depth,
            dim: self.config.hidden_dim,
            embed_dim,
            num_relations: self.graph.num_relations(),
            num_labels: self.dataset.num_relations(),
            activation: self.config.activation,
        }
    }

    /// Trains a freshly initialized encoder on the training split and keeps
    /// the result.
    pub fn train_gnn(&mut self) -> Result<TrainReport> {
        self.guard.admit_all(&self.splits.train)?;
        let mut drugs: Vec<EntityId> = self
            .splits
            .train
            .iter()
            .flat_map(|&i| [self.dataset.pairs[i].u, self.dataset.pairs[i].v])
            .collect();
        drugs.sort_unstable();
        drugs.dedup();
        let features = self.feature_table(&drugs)?;
        let embed_dim = drugs
            .first()
            .map(|d| features[d].dim())
            .ok_or(PipelineError::Missing("training pairs"))?;
        let mut train_config = self.config.train.clone();
        // the loss always follows the task mode
        train_config.loss_mode = self.loss_mode();
        let params = GnnParams::init(self.shape(embed_dim), self.config.seed)?;
        let report = self.in_pool(|| {
            train(
                params,
                &self.graph,
                &self.dataset,
                &self.splits.train,
                &features,
                &train_config,
            )
        })??;
        info!(
            "trained {} epochs, final loss {:.4}",
            report.losses.len(),
            report.losses.last().copied().unwrap_or(f64::NAN)
        );
        self.params = Some(report.params.clone());
        Ok(report)
    }

    /// Finite-difference check of the training gradient at `inits` fresh
    /// initializations, each on a training pair drawn with the config seed.
    pub fn grad_check(&self, inits: usize, epsilon: f64, samples: usize) -> Result<Vec<GradCheckReport>> {
        let train = &self.splits.train;
        if train.is_empty() {
            return Err(PipelineError::Missing("training pairs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut reports = Vec::with_capacity(inits);
        for s in 0..inits as u64 {
            let i = train[rand::Rng::random_range(&mut rng, 0..train.len())];
            let labels = self.guard.labels(&self.dataset, i, LabelUse::Knowledge)?;
            let pair = &self.dataset.pairs[i];
            let (f_u, f_v) = (self.feature(pair.u)?, self.feature(pair.v)?);
            let negatives = (0..self.dataset.num_relations())
                .filter(|r| !labels.contains(r))
                .take(self.config.train.negatives_per_positive * labels.len())
                .collect();
            let inst = TrainingInstance {
                u: pair.u,
                v: pair.v,
                f_u: &f_u,
                f_v: &f_v,
                labels,
                negatives,
                mask_own_edges: self.config.train.mask_own_edges,
            };
            let seed = self.config.seed.wrapping_add(s);
            let params = GnnParams::init(self.shape(f_u.dim()), seed)?;
            reports.push(grad_check(&params, &self.graph, &inst, self.loss_mode(), epsilon, samples, seed)?);
        }
        Ok(reports)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(self.params()?.clone(), Some(self.config.train.clone())))
    }

    fn analyze(&self, u: EntityId, v: EntityId) -> Result<PairAnalysis> {
        let params = self.params()?;
        let names = (self.name(u)?, self.name(v)?);
        let descriptions = (self.describe(u)?, self.describe(v)?);
        let f_u = self.feature(u)?;
        let f_v = self.feature(v)?;
        // a pair's own interaction edges never inform its representation
        let mask = Some((u, v));
        let h_p = encode_pair_masked(params, &self.graph, u, v, &f_u, &f_v, mask)
            .map_err(|e| PipelineError::stage("encode", e))?;
        let found = extract_paths_masked(
            params,
            &self.graph,
            u,
            v,
            &f_u,
            &f_v,
            self.config.depth,
            self.config.p,
            mask,
        )
        .map_err(|e| PipelineError::stage("paths", e))?;
        let paths = found
            .iter()
            .map(|p| render_path(p, &self.registry, &self.graph))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::stage("paths", e))?;
        let logits = score_relations(params, &h_p).map_err(|e| PipelineError::stage("score", e))?;
        Ok(PairAnalysis {
            names,
            descriptions,
            h_p,
            paths,
            logits,
        })
    }

    fn semantic_vectors(&self, d: &(String, String)) -> Result<(TextEmbedding, TextEmbedding)> {
        let embed = |t: String| self.embedder.embed(&t).map_err(|e| PipelineError::stage("embed", e));
        Ok((embed(description_text(&d.0, &d.1))?, embed(description_text(&d.1, &d.0))?))
    }

    #[allow(clippy::too_many_arguments)]
    fn make_case(
        &self,
        case_id: String,
        u: EntityId,
        v: EntityId,
        a: &PairAnalysis,
        mechanism: String,
        labels: Vec<usize>,
        revised: bool,
    ) -> Result<Case> {
        let (sem_vec, _) = self.semantic_vectors(&a.descriptions)?;
        let mech_vec = self
            .embedder
            .embed(&mechanism)
            .map_err(|e| PipelineError::stage("embed", e))?;
        Ok(Case {
            case_id,
            drugs: [
                CaseDrug {
                    name: a.names.0.clone(),
                    id: u,
                },
                CaseDrug {
                    name: a.names.1.clone(),
                    id: v,
                },
            ],
            descriptions: [a.descriptions.0.clone(), a.descriptions.1.clone()],
            paths: a.paths.clone(),
            h_c: a.h_p.clone(),
            mechanism,
            labels,
            sem_vec,
            mech_vec,
            created_at: 0,
            revised,
        })
    }

    fn train_case(&self, i: usize) -> Result<Case> {
        let labels = self.guard.labels(&self.dataset, i, LabelUse::Knowledge)?.to_vec();
        let pair = &self.dataset.pairs[i];
        let a = self.analyze(pair.u, pair.v)?;
        let mechanism = self
            .client
            .distill_mechanism((&a.names.0, &a.names.1), &self.label_text(&labels), &a.paths)
            .map_err(|e| PipelineError::stage("distill", e))?;
        self.make_case(format!("train-{i:06}"), pair.u, pair.v, &a, mechanism, labels, false)
    }

    /// Seeded sample of `init_fraction` of the training pairs turned into
    /// cases. Pairs whose generation fails are skipped and reported.
    pub fn build_repository(&self) -> Result<(Repository, Vec<String>)> {
        let train = &self.splits.train;
        if train.is_empty() {
            return Err(PipelineError::Missing("training pairs"));
        }
        let n = train.len();
        let m = ((self.config.init_fraction * n as f64).round() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut picks = rand::seq::index::sample(&mut rng, n, m).into_vec();
        picks.sort_unstable();
        let pairs: Vec<usize> = picks.iter().map(|&p| train[p]).collect();
        let built: Vec<Result<Case>> = self.in_pool(|| pairs.par_iter().map(|&i| self.train_case(i)).collect())?;
        let mut repo = Repository::new(self.config.task_mode, self.config.refinement.clone())?;
        let mut warnings = Vec::new();
        for (i, case) in pairs.iter().zip(built) {
            match case {
                Ok(c) => {
                    repo.insert_case(c)?;
                }
                Err(PipelineError::Leakage(m)) => return Err(PipelineError::Leakage(m)),
                Err(e) => {
                    warn!("skipping pair {i}: {e}");
                    warnings.push(format!("pair {i}: {e}"));
                }
            }
        }
        if repo.is_empty() {
            return Err(PipelineError::Stage {
                stage: "build-repo",
                detail: format!("all {m} sampled pairs failed"),
            });
        }
        Ok((repo, warnings))
    }

    fn predict_inner(&self, u: EntityId, v: EntityId) -> Result<(PredictionRecord, PairAnalysis)> {
        if u == v {
            return Err(PipelineError::Config("a drug cannot interact with itself here".into()));
        }
        let a = self.analyze(u, v)?;
        let n = self.config.candidates().min(a.logits.len());
        let candidates = candidate_filter(&a.logits, n);
        let mut cases = Vec::new();
        let mut renders = Vec::new();
        if self.config.ablation.with_cases {
            if let Some(repo) = self.repository.as_ref().filter(|r| !r.is_empty()) {
                let (sem_vec, swapped) = self.semantic_vectors(&a.descriptions)?;
                let query = RetrievalQuery {
                    sem_vec,
                    sem_vec_swapped: Some(swapped),
                    h_p: a.h_p.clone(),
                    lambda: self.config.lambda,
                    k: self.config.k,
                    exclude_pair: Some((u, v)),
                };
                for hit in repo.retrieve(&query)? {
                    cases.push(RetrievedCase {
                        case_id: hit.case.case_id.clone(),
                        score: hit.score,
                        semantic: hit.semantic,
                        structural: hit.structural,
                    });
                    renders.push(CaseRendering {
                        drugs: (hit.case.drugs[0].name.clone(), hit.case.drugs[1].name.clone()),
                        paths: hit.case.paths.clone(),
                        mechanism: hit.case.mechanism.clone(),
                        label: self.label_text(&hit.case.labels),
                    });
                }
            }
        }
        let bundle = PromptBundle {
            task_description: DEFAULT_TASK_DESCRIPTION.into(),
            drugs: a.names.clone(),
            descriptions: a.descriptions.clone(),
            cases: renders,
            paths: a.paths.clone(),
            candidates: candidates
                .iter()
                .map(|&id| Candidate {
                    id,
                    name: self.dataset.relation_names[id].clone(),
                })
                .collect(),
            ablation: self.config.ablation,
            mechanism_budget: self.config.mechanism_budget,
            answers: self.config.answers(),
        };
        let prompt = bundle.render();
        let (mechanism, predicted, parse_status, gateway_error) =
            match self.client.predict(&bundle, self.config.task_mode) {
                Ok(p) => (p.mechanism, p.labels, p.parse_status, None),
                Err(e) => {
                    warn!("prediction for {} / {} fell back to the GNN: {e}", a.names.0, a.names.1);
                    let take = self.config.answers().min(candidates.len());
                    (String::new(), candidates[..take].to_vec(), ParseStatus::Fallback, Some(e.to_string()))
                }
            };
        let record = PredictionRecord {
            pair: None,
            drugs: a.names.clone(),
            truth: Vec::new(),
            candidates,
            cases,
            paths: a.paths.clone(),
            mechanism,
            predicted,
            parse_status,
            gateway_error,
            correct: None,
            prompt,
        };
        Ok((record, a))
    }

    /// Predicts the interaction of an arbitrary drug pair.
    pub fn predict_pair(&self, u: EntityId, v: EntityId) -> Result<PredictionRecord> {
        Ok(self.predict_inner(u, v)?.0)
    }

    fn predict_indexed(&self, i: usize) -> Result<(PredictionRecord, PairAnalysis)> {
        let pair = &self.dataset.pairs[i];
        let (mut record, a) = self.predict_inner(pair.u, pair.v)?;
        let truth = self.guard.labels(&self.dataset, i, LabelUse::Scoring)?.to_vec();
        if self.config.task_mode == TaskMode::Multiclass {
            record.correct = Some(record.predicted.first() == truth.first());
        }
        record.pair = Some(i);
        record.truth = truth;
        Ok((record, a))
    }

    /// Files a just-predicted validation pair as a case, revising the
    /// mechanism when the prediction was wrong, and refines when due.
    fn resolve(&mut self, i: usize, record: &PredictionRecord, a: PairAnalysis) -> Result<()> {
        let labels = self.guard.labels(&self.dataset, i, LabelUse::Knowledge)?.to_vec();
        let wrong = !record.predicted.first().is_some_and(|p| labels.contains(p));
        let correct_label = self.label_text(&labels);
        let (mechanism, revised) = if record.gateway_error.is_some() {
            let m = self
                .client
                .distill_mechanism((&a.names.0, &a.names.1), &correct_label, &a.paths)
                .map_err(|e| PipelineError::stage("distill", e))?;
            (m, false)
        } else if wrong {
            let rendering = CaseRendering {
                drugs: a.names.clone(),
                paths: a.paths.clone(),
                mechanism: record.mechanism.clone(),
                label: self.label_text(&record.predicted[..record.predicted.len().min(1)]),
            };
            let m = self
                .client
                .revise_mechanism(&rendering, &correct_label)
                .map_err(|e| PipelineError::stage("revise", e))?;
            (m, true)
        } else {
            (record.mechanism.clone(), false)
        };
        let pair = &self.dataset.pairs[i];
        let case = self.make_case(format!("resolved-{i:06}"), pair.u, pair.v, &a, mechanism, labels, revised)?;
        let repo = match self.repository.as_mut() {
            Some(r) => r,
            None => self
                .repository
                .insert(Repository::new(self.config.task_mode, self.config.refinement.clone())?),
        };
        if repo.insert_case(case)? {
            let (refined, report) = repo.refine()?;
            info!("online refinement: {} → {} cases", report.before(), report.after());
            *repo = refined;
        }
        Ok(())
    }

    /// Predicts every pair of `split` and scores the results. With
    /// `online_refine`, pairs run in order and each one is filed into the
    /// repository once answered; test splits refuse this mode.
    pub fn evaluate(&mut self, split: SplitName) -> Result<Evaluation> {
        let pairs = self.splits.pairs(split).to_vec();
        if pairs.is_empty() {
            return Err(PipelineError::Config(format!("split {split} is empty")));
        }
        let results: Vec<(usize, Result<PredictionRecord>)> = if self.config.online_refine {
            if split.is_test() {
                return Err(PipelineError::Leakage(format!(
                    "online refinement reads answers and cannot run on {split}"
                )));
            }
            let mut out = Vec::with_capacity(pairs.len());
            for &i in &pairs {
                match self.predict_indexed(i) {
                    Ok((record, a)) => {
                        if let Err(e) = self.resolve(i, &record, a) {
                            if matches!(e, PipelineError::Leakage(_)) {
                                return Err(e);
                            }
                            warn!("pair {i} not filed: {e}");
                        }
                        out.push((i, Ok(record)));
                    }
                    Err(e) => out.push((i, Err(e))),
                }
            }
            out
        } else {
            self.in_pool(|| {
                pairs
                    .par_iter()
                    .map(|&i| (i, self.predict_indexed(i).map(|(r, _)| r)))
                    .collect()
            })?
        };
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (pair, r) in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    warn!("pair {pair} failed: {e}");
                    failures.push(PairFailure {
                        pair,
                        error: e.to_string(),
                    });
                }
            }
        }
        let report = self.report(split, &records, failures.len())?;
        Ok(Evaluation {
            report,
            records,
            failures,
        })
    }

    fn report(&self, split: SplitName, records: &[PredictionRecord], failed: usize) -> Result<MetricsReport> {
        let outcomes: Vec<Outcome> = records
            .iter()
            .map(|r| Outcome {
                predicted: r.predicted.clone(),
                truth: r.truth.clone(),
            })
            .collect();
        let mut parse_status = BTreeMap::new();
        for r in records {
            let key = serde_json::to_value(r.parse_status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *parse_status.entry(key).or_insert(0) += 1;
        }
        let classes = self.dataset.num_relations();
        let mut report = MetricsReport {
            split: split.to_string(),
            task_mode: self.config.task_mode,
            evaluated: records.len(),
            failed,
            accuracy: None,
            f1_macro: None,
            f1_macro_strict: None,
            recall_at_5: None,
            ndcg_at_5: None,
            per_class: Vec::new(),
            parse_status,
            label_violations: self.guard.violations(),
            config: self.config.clone(),
        };
        if outcomes.is_empty() {
            return Ok(report);
        }
        match self.config.task_mode {
            TaskMode::Multiclass => {
                report.accuracy = Some(metrics::accuracy(&outcomes)?);
                report.f1_macro = Some(metrics::f1_macro(&outcomes, classes)?);
                report.f1_macro_strict = Some(metrics::f1_macro_strict(&outcomes, classes)?);
                report.per_class = metrics::per_class(&outcomes, classes);
            }
            TaskMode::Multilabel => {
                report.recall_at_5 = Some(metrics::mean_over(&outcomes, metrics::recall_at_5)?);
                report.ndcg_at_5 = Some(metrics::mean_over(&outcomes, metrics::ndcg_at_5)?);
            }
        }
        Ok(report)
    }

    /// Evaluates `split` once per value of `param` (`lambda`, `k`, `p` or
    /// `n`) and returns `(value, primary metric)` rows. Config and
    /// repository are restored afterwards.
    pub fn sweep(&mut self, split: SplitName, param: &str, values: &[f64]) -> Result<Vec<(f64, f64)>> {
        let saved_config = self.config.clone();
        let saved_repo = self.repository.clone();
        let mut rows = Vec::with_capacity(values.len());
        let mut outcome = Ok(());
        for &value in values {
            let mut cfg = saved_config.clone();
            let run = apply_param(&mut cfg, param, value)
                .and_then(|_| self.set_config(cfg))
                .and_then(|_| self.evaluate(split));
            self.repository = saved_repo.clone();
            match run {
                Ok(eval) => rows.push((value, eval.report.primary().unwrap_or(f64::NAN))),
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        self.config = saved_config;
        outcome.map(|_| rows)
    }

    /// Retrieval queries for every pair of `split`, labelled with the truth.
    pub fn labeled_queries(&self, split: SplitName) -> Result<Vec<LabeledQuery>> {
        let params = self.params()?;
        let pairs = self.splits.pairs(split);
        let rows: Vec<Result<LabeledQuery>> = self.in_pool(|| {
            pairs
                .par_iter()
                .map(|&i| {
                    let p = &self.dataset.pairs[i];
                    let (f_u, f_v) = (self.feature(p.u)?, self.feature(p.v)?);
                    let h_p = encode_pair_masked(params, &self.graph, p.u, p.v, &f_u, &f_v, Some((p.u, p.v)))?;
                    let (sem_vec, swapped) = self.semantic_vectors(&(self.describe(p.u)?, self.describe(p.v)?))?;
                    Ok(LabeledQuery {
                        query: RetrievalQuery {
                            sem_vec,
                            sem_vec_swapped: Some(swapped),
                            h_p,
                            lambda: self.config.lambda,
                            k: self.config.k,
                            exclude_pair: Some((p.u, p.v)),
                        },
                        labels: self.guard.labels(&self.dataset, i, LabelUse::Scoring)?.to_vec(),
                    })
                })
                .collect()
        })?;
        rows.into_iter().collect()
    }

    /// Top-`k` majority-vote accuracy on `split` for each λ.
    pub fn retrieval_curve(&self, split: SplitName, lambdas: &[f64], k: usize) -> Result<Vec<(f64, f64)>> {
        let repo = self.repository.as_ref().ok_or(PipelineError::Missing("case repository"))?;
        let queries = self.labeled_queries(split)?;
        lambdas
            .iter()
            .map(|&l| Ok((l, retrieval_majority_accuracy(repo, &queries, l, k)?)))
            .collect()
    }
}

fn apply_param(cfg: &mut PipelineConfig, param: &str, value: f64) -> Result<()> {
    let count = || {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(PipelineError::Config(format!("{param} needs a positive integer, got {value}")))
        }
    };
    match param {
        "lambda" => cfg.lambda = value,
        "k" => cfg.k = count()?,
        "p" => cfg.p = count()?,
        "n" => cfg.n = Some(count()?),
        other => return Err(PipelineError::Config(format!("cannot sweep {other:?} (lambda, k, p, n)"))),
    }
    Ok(())
}
