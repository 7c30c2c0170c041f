//! Case repository: storage, hybrid retrieval, refinement and persistence.

mod kmedoids;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmedoids::{cosine_distance_matrix, k_medoids, pam, Clustering};

use crate::embedding::{cosine, Embedder, EmbeddingError, TextEmbedding};
use crate::gnn::PairRepresentation;
use crate::graph::{EntityId, TaskMode};

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("case id {0:?} already present")]
    DuplicateId(String),
    #[error("no case with id {0:?}")]
    UnknownId(String),
    #[error("repository is empty")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("k = {k} exceeds the {n} available points")]
    KTooLarge { k: usize, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("unsupported repository format {format:?} version {version}")]
    Version { format: String, version: u32 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = RepoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDrug {
    pub name: String,
    pub id: EntityId,
}

/// One resolved interaction with everything needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub drugs: [CaseDrug; 2],
    pub descriptions: [String; 2],
    /// Rendered association paths.
    pub paths: Vec<String>,
    pub h_c: PairRepresentation,
    pub mechanism: String,
    /// Sorted label ids; exactly one in multiclass mode.
    pub labels: Vec<usize>,
    /// Embedding of [`description_text`] over `descriptions`.
    pub sem_vec: TextEmbedding,
    pub mech_vec: TextEmbedding,
    #[serde(default)]
    pub created_at: u64,
    #[serde(default)]
    pub revised: bool,
}

impl Case {
    /// Category the case is filed under.
    pub fn primary_label(&self) -> usize {
        self.labels[0]
    }

    pub fn involves_pair(&self, a: EntityId, b: EntityId) -> bool {
        let (x, y) = (self.drugs[0].id, self.drugs[1].id);
        (x == a && y == b) || (x == b && y == a)
    }
}

/// Text embedded for the semantic side of retrieval.
pub fn description_text(d_u: &str, d_v: &str) -> String {
    format!("Drug A: {d_u} Drug B: {d_v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Refinement becomes due once the repository holds more cases than this
    /// (0 disables the size trigger).
    pub size_threshold: usize,
    pub new_case_trigger: usize,
    pub keep_fraction: f64,
    pub min_per_category: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            size_threshold: 0,
            new_case_trigger: 1000,
            keep_fraction: 0.05,
            min_per_category: 10,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(RepoError::Invalid(format!(
                "keep_fraction {} must lie in (0, 1]",
                self.keep_fraction
            )));
        }
        if self.min_per_category == 0 {
            return Err(RepoError::Invalid("min_per_category must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Medoids kept for a category of `n` cases.
    pub fn retained(&self, n: usize) -> usize {
        // the epsilon absorbs products like 0.05·1000 landing a hair above 50
        let share = (self.keep_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        n.min(self.min_per_category.max(share))
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalQuery {
    pub sem_vec: TextEmbedding,
    /// Embedding of the descriptions in swapped order; the semantic score is
    /// the better of the two orientations.
    pub sem_vec_swapped: Option<TextEmbedding>,
    pub h_p: PairRepresentation,
    pub lambda: f64,
    pub k: usize,
    /// The query's own drug pair, never returned.
    pub exclude_pair: Option<(EntityId, EntityId)>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoredCase<'a> {
    pub case: &'a Case,
    pub score: f64,
    pub semantic: f64,
    pub structural: f64,
}

/// `λ · semantic + (1 − λ) · structural`.
#[inline]
pub fn hybrid_score(lambda: f64, semantic: f64, structural: f64) -> f64 {
    lambda * semantic + (1.0 - lambda) * structural
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySize {
    pub before: usize,
    pub after: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefinementReport {
    /// Keyed by label id.
    pub categories: BTreeMap<usize, CategorySize>,
}

impl RefinementReport {
    pub fn before(&self) -> usize {
        self.categories.values().map(|c| c.before).sum()
    }

    pub fn after(&self) -> usize {
        self.categories.values().map(|c| c.after).sum()
    }
}

/// One query with its ground-truth labels, for retrieval diagnostics.
#[derive(Debug, Clone)]
pub struct LabeledQuery {
    pub query: RetrievalQuery,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repository {
    cases: BTreeMap<String, Case>,
    categories: BTreeMap<usize, BTreeSet<String>>,
    pending: usize,
    next_created: u64,
    config: RefinementConfig,
    task_mode: TaskMode,
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
}

const FORMAT: &str = "casebook-repository";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task_mode: TaskMode,
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
    pending: usize,
    next_created: u64,
    case_count: usize,
    config: RefinementConfig,
}

impl Repository {
    pub fn new(task_mode: TaskMode, config: RefinementConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            cases: BTreeMap::new(),
            categories: BTreeMap::new(),
            pending: 0,
            next_created: 0,
            config,
            task_mode,
            embed_dim: None,
            hidden_dim: None,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn config(&self) -> &RefinementConfig {
        &self.config
    }

    pub fn task_mode(&self) -> TaskMode {
        self.task_mode
    }

    pub fn get(&self, case_id: &str) -> Option<&Case> {
        self.cases.get(case_id)
    }

    /// Cases in id order.
    pub fn cases(&self) -> impl Iterator<Item = &Case> {
        self.cases.values()
    }

    pub fn categories(&self) -> &BTreeMap<usize, BTreeSet<String>> {
        &self.categories
    }

    pub fn refinement_due(&self) -> bool {
        self.pending >= self.config.new_case_trigger
            || (self.config.size_threshold > 0 && self.cases.len() > self.config.size_threshold)
    }

    fn check_case(&self, case: &Case) -> Result<()> {
        if case.labels.is_empty() {
            return Err(RepoError::Invalid(format!("case {:?} has no label", case.case_id)));
        }
        if self.task_mode == TaskMode::Multiclass && case.labels.len() != 1 {
            return Err(RepoError::Invalid(format!(
                "case {:?} has {} labels in multiclass mode",
                case.case_id,
                case.labels.len()
            )));
        }
        if !case.labels.windows(2).all(|w| w[0] < w[1]) {
            return Err(RepoError::Invalid(format!("case {:?} labels must be sorted", case.case_id)));
        }
        if case.sem_vec.dim() != case.mech_vec.dim() {
            return Err(RepoError::Dimension(format!(
                "case {:?}: sem_vec {} vs mech_vec {}",
                case.case_id,
                case.sem_vec.dim(),
                case.mech_vec.dim()
            )));
        }
        if let Some(d) = self.embed_dim {
            if case.sem_vec.dim() != d {
                return Err(RepoError::Dimension(format!(
                    "case {:?} embeddings have dim {}, repository uses {d}",
                    case.case_id,
                    case.sem_vec.dim()
                )));
            }
        }
        if let Some(h) = self.hidden_dim {
            if case.h_c.0.len() != h {
                return Err(RepoError::Dimension(format!(
                    "case {:?} h_c has length {}, repository uses {h}",
                    case.case_id,
                    case.h_c.0.len()
                )));
            }
        }
        Ok(())
    }

    fn index(&mut self, case: Case) {
        self.embed_dim.get_or_insert(case.sem_vec.dim());
        self.hidden_dim.get_or_insert(case.h_c.0.len());
        self.categories
            .entry(case.primary_label())
            .or_default()
            .insert(case.case_id.clone());
        self.cases.insert(case.case_id.clone(), case);
    }

    /// Adds `case`, stamping its creation counter. Returns whether
    /// refinement is now due.
    pub fn insert_case(&mut self, mut case: Case) -> Result<bool> {
        if self.cases.contains_key(&case.case_id) {
            return Err(RepoError::DuplicateId(case.case_id));
        }
        self.check_case(&case)?;
        case.created_at = self.next_created;
        self.next_created += 1;
        self.index(case);
        self.pending += 1;
        Ok(self.refinement_due())
    }

    /// Replaces a case's mechanism text and embedding and flags it revised.
    pub fn revise_case(&mut self, case_id: &str, mechanism: &str, embedder: &Embedder) -> Result<()> {
        let case = self
            .cases
            .get_mut(case_id)
            .ok_or_else(|| RepoError::UnknownId(case_id.to_string()))?;
        let vec = embedder.embed(mechanism)?;
        if vec.dim() != case.mech_vec.dim() {
            return Err(RepoError::Dimension(format!(
                "revised mechanism has dim {}, case uses {}",
                vec.dim(),
                case.mech_vec.dim()
            )));
        }
        case.mechanism = mechanism.to_string();
        case.mech_vec = vec;
        case.revised = true;
        Ok(())
    }

    /// Top-`k` cases by hybrid score, ties by case id ascending.
    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<Vec<ScoredCase<'_>>> {
        if self.cases.is_empty() {
            return Err(RepoError::Empty);
        }
        if !(0.0..=1.0).contains(&query.lambda) {
            return Err(RepoError::Invalid(format!("λ = {} outside [0, 1]", query.lambda)));
        }
        if query.k == 0 {
            return Err(RepoError::Invalid("K must be ≥ 1".into()));
        }
        if let Some(d) = self.embed_dim {
            let swapped_ok = query.sem_vec_swapped.as_ref().is_none_or(|s| s.dim() == d);
            if query.sem_vec.dim() != d || !swapped_ok {
                return Err(RepoError::Dimension(format!(
                    "query embedding has dim {}, repository uses {d}",
                    query.sem_vec.dim()
                )));
            }
        }
        if let Some(h) = self.hidden_dim {
            if query.h_p.0.len() != h {
                return Err(RepoError::Dimension(format!(
                    "query h_p has length {}, repository uses {h}",
                    query.h_p.0.len()
                )));
            }
        }
        let mut scored: Vec<ScoredCase<'_>> = self
            .cases
            .values()
            .filter(|c| query.exclude_pair.is_none_or(|(a, b)| !c.involves_pair(a, b)))
            .map(|c| {
                let mut semantic = cosine(query.sem_vec.values(), c.sem_vec.values());
                if let Some(s) = &query.sem_vec_swapped {
                    semantic = semantic.max(cosine(s.values(), c.sem_vec.values()));
                }
                let structural = cosine(&query.h_p.0, &c.h_c.0);
                ScoredCase {
                    case: c,
                    score: hybrid_score(query.lambda, semantic, structural),
                    semantic,
                    structural,
                }
            })
            .collect();
        let order = |a: &ScoredCase<'_>, b: &ScoredCase<'_>| {
            b.score.total_cmp(&a.score).then_with(|| a.case.case_id.cmp(&b.case.case_id))
        };
        if scored.len() > query.k {
            scored.select_nth_unstable_by(query.k - 1, order);
            scored.truncate(query.k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    /// Per-category K-Medoids compaction over mechanism embeddings. Returns
    /// the compacted repository (pending count reset) and a size report.
    pub fn refine(&self) -> Result<(Repository, RefinementReport)> {
        if self.cases.is_empty() {
            return Err(RepoError::Empty);
        }
        let groups: Vec<(usize, Vec<&Case>)> = self
            .categories
            .iter()
            .map(|(&label, ids)| (label, ids.iter().map(|id| &self.cases[id]).collect()))
            .collect();
        let results: Vec<Result<(usize, CategorySize, Vec<&Case>)>> = groups
            .par_iter()
            .map(|(label, members)| {
                let n = members.len();
                let k = self.config.retained(n);
                let points: Vec<&[f64]> = members.iter().map(|c| c.mech_vec.values()).collect();
                let clustering = k_medoids(&points, k)?;
                let kept: Vec<&Case> = clustering.medoids.iter().map(|&m| members[m]).collect();
                Ok((
                    *label,
                    CategorySize {
                        before: n,
                        after: kept.len(),
                        k,
                    },
                    kept,
                ))
            })
            .collect();
        let mut refined = Repository {
            cases: BTreeMap::new(),
            categories: BTreeMap::new(),
            pending: 0,
            next_created: self.next_created,
            config: self.config.clone(),
            task_mode: self.task_mode,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        };
        let mut report = RefinementReport::default();
        for r in results {
            let (label, size, kept) = r?;
            report.categories.insert(label, size);
            for c in kept {
                refined.index(c.clone());
            }
        }
        Ok((refined, report))
    }

    /// Writes a header line followed by one JSON object per case.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| RepoError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            task_mode: self.task_mode,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            pending: self.pending,
            next_created: self.next_created,
            case_count: self.cases.len(),
            config: self.config.clone(),
        };
        let mut write_line = |value: String| -> Result<()> {
            out.write_all(value.as_bytes()).map_err(io)?;
            out.write_all(b"\n").map_err(io)
        };
        write_line(serde_json::to_string(&header).expect("header serializes"))?;
        for case in self.cases.values() {
            write_line(serde_json::to_string(case).expect("case serializes"))?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |source| RepoError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or(RepoError::Parse {
                line: 1,
                detail: "missing header".into(),
            })?
            .map_err(io)?;
        let header: Header = serde_json::from_str(&first).map_err(|e| RepoError::Parse {
            line: 1,
            detail: e.to_string(),
        })?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(RepoError::Version {
                format: header.format,
                version: header.version,
            });
        }
        let mut repo = Repository::new(header.task_mode, header.config)?;
        repo.embed_dim = header.embed_dim;
        repo.hidden_dim = header.hidden_dim;
        let mut count = 0;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let case: Case = serde_json::from_str(&line).map_err(|e| RepoError::Parse {
                line: lineno,
                detail: e.to_string(),
            })?;
            if repo.cases.contains_key(&case.case_id) {
                return Err(RepoError::Parse {
                    line: lineno,
                    detail: format!("duplicate case id {:?}", case.case_id),
                });
            }
            repo.check_case(&case).map_err(|e| RepoError::Parse {
                line: lineno,
                detail: e.to_string(),
            })?;
            repo.index(case);
            count += 1;
        }
        if count != header.case_count {
            return Err(RepoError::Parse {
                line: count + 2,
                detail: format!("header promises {} cases, file holds {count}", header.case_count),
            });
        }
        repo.pending = header.pending;
        repo.next_created = header.next_created;
        Ok(repo)
    }
}

/// Label voted by the top-K cases: most frequent primary label, ties by
/// larger summed score, then smaller label id.
pub fn majority_label(hits: &[ScoredCase<'_>]) -> Option<usize> {
    let mut votes: HashMap<usize, (usize, f64)> = HashMap::new();
    for h in hits {
        let e = votes.entry(h.case.primary_label()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += h.score;
    }
    votes
        .into_iter()
        .max_by(|a, b| {
            (a.1 .0)
                .cmp(&b.1 .0)
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then(b.0.cmp(&a.0))
        })
        .map(|(label, _)| label)
}

/// Fraction of queries whose top-`k` majority label is among their labels,
/// with every query scored at the given `lambda`.
pub fn retrieval_majority_accuracy(repo: &Repository, queries: &[LabeledQuery], lambda: f64, k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(RepoError::Invalid("empty query set".into()));
    }
    let hits: Vec<Result<bool>> = queries
        .par_iter()
        .map(|q| {
            let mut query = q.query.clone();
            query.lambda = lambda;
            query.k = k;
            let top = repo.retrieve(&query)?;
            Ok(majority_label(&top).is_some_and(|l| q.labels.contains(&l)))
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> TextEmbedding {
        TextEmbedding::new(v.to_vec()).unwrap()
    }

    fn case(id: &str, label: usize, sem: &[f64], h: &[f64], mech: &[f64]) -> Case {
        Case {
            case_id: id.into(),
            drugs: [
                CaseDrug {
                    name: format!("{id}-a"),
                    id: EntityId(0),
                },
                CaseDrug {
                    name: format!("{id}-b"),
                    id: EntityId(1),
                },
            ],
            descriptions: ["first".into(), "second".into()],
            paths: vec![],
            h_c: PairRepresentation(h.to_vec()),
            mechanism: format!("mechanism of {id}"),
            labels: vec![label],
            sem_vec: emb(sem),
            mech_vec: emb(mech),
            created_at: 0,
            revised: false,
        }
    }

    fn query(sem: &[f64], h: &[f64], lambda: f64, k: usize) -> RetrievalQuery {
        RetrievalQuery {
            sem_vec: emb(sem),
            sem_vec_swapped: None,
            h_p: PairRepresentation(h.to_vec()),
            lambda,
            k,
            exclude_pair: None,
        }
    }

    fn repo() -> Repository {
        Repository::new(TaskMode::Multiclass, RefinementConfig::default()).unwrap()
    }

    #[test]
    fn identical_semantics_rank_first_at_lambda_one() {
        let mut r = repo();
        r.insert_case(case("b", 0, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0])).unwrap();
        r.insert_case(case("a", 1, &[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        let top = r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0], 1.0, 1)).unwrap();
        assert_eq!(top[0].case.case_id, "b");
        assert_eq!(top[0].score, 1.0);
    }

    #[test]
    fn hybrid_arithmetic() {
        assert!((hybrid_score(0.5, 0.8, 0.4) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_case_id_and_self_pair_is_excluded() {
        let mut r = repo();
        for id in ["c", "a", "b"] {
            r.insert_case(case(id, 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        }
        let top = r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0], 0.5, 2)).unwrap();
        let ids: Vec<&str> = top.iter().map(|s| s.case.case_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        let mut q = query(&[1.0, 0.0], &[1.0, 0.0], 0.5, 2);
        q.exclude_pair = Some((EntityId(1), EntityId(0)));
        assert!(r.retrieve(&q).unwrap().is_empty());
    }

    #[test]
    fn zero_structure_contributes_nothing() {
        let mut r = repo();
        r.insert_case(case("a", 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        let top = r.retrieve(&query(&[1.0, 0.0], &[0.0, 0.0], 0.25, 1)).unwrap();
        assert_eq!(top[0].structural, 0.0);
        assert_eq!(top[0].score, 0.25);
    }

    #[test]
    fn swapped_orientation_takes_the_better_score() {
        let mut r = repo();
        r.insert_case(case("a", 0, &[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        let mut q = query(&[1.0, 0.0], &[1.0, 0.0], 1.0, 1);
        assert_eq!(r.retrieve(&q).unwrap()[0].semantic, 0.0);
        q.sem_vec_swapped = Some(emb(&[0.0, 1.0]));
        assert_eq!(r.retrieve(&q).unwrap()[0].semantic, 1.0);
    }

    #[test]
    fn retrieval_errors() {
        let r = repo();
        assert!(matches!(r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0], 0.5, 1)), Err(RepoError::Empty)));
        let mut r = repo();
        r.insert_case(case("a", 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        assert!(r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0], 1.5, 1)).is_err());
        assert!(r.retrieve(&query(&[1.0, 0.0, 0.0], &[1.0, 0.0], 0.5, 1)).is_err());
        assert!(r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0, 0.0], 0.5, 1)).is_err());
    }

    #[test]
    fn insert_rules() {
        let mut r = repo();
        r.insert_case(case("a", 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        assert_eq!((r.len(), r.pending()), (1, 1));
        let before = r.clone();
        assert!(matches!(
            r.insert_case(case("a", 1, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])),
            Err(RepoError::DuplicateId(_))
        ));
        assert_eq!(r, before);
        let mut two = case("b", 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]);
        two.labels = vec![0, 1];
        assert!(r.insert_case(two).is_err());
    }

    #[test]
    fn trigger_raises_refinement_flag() {
        let cfg = RefinementConfig {
            new_case_trigger: 3,
            ..RefinementConfig::default()
        };
        let mut r = Repository::new(TaskMode::Multiclass, cfg).unwrap();
        let due: Vec<bool> = ["a", "b", "c"]
            .iter()
            .map(|id| r.insert_case(case(id, 0, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap())
            .collect();
        assert_eq!(due, [false, false, true]);
    }

    #[test]
    fn retained_count_formula() {
        let cfg = RefinementConfig::default();
        assert_eq!(cfg.retained(8), 8);
        assert_eq!(cfg.retained(1000), 50);
        assert_eq!(cfg.retained(100), 10);
        assert_eq!(cfg.retained(201), 11);
        assert!(RefinementConfig {
            keep_fraction: 0.0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn refine_keeps_small_categories_and_resets_pending() {
        let mut r = repo();
        for i in 0..8 {
            let t = i as f64;
            r.insert_case(case(&format!("c{i}"), i % 2, &[1.0, t], &[t, 1.0], &[1.0, t])).unwrap();
        }
        let (refined, report) = r.refine().unwrap();
        assert_eq!(refined.len(), 8);
        assert_eq!(refined.pending(), 0);
        assert_eq!(report.categories[&0], CategorySize { before: 4, after: 4, k: 4 });
    }

    #[test]
    fn revise_replaces_mechanism() {
        let embedder = Embedder::hashed(8).unwrap();
        let mut r = repo();
        let mut c = case("a", 0, &[1.0; 8], &[1.0, 0.0], &[1.0; 8]);
        c.mech_vec = embedder.embed("old text").unwrap();
        r.insert_case(c).unwrap();
        r.revise_case("a", "enzyme inhibition", &embedder).unwrap();
        let got = r.get("a").unwrap();
        assert_eq!(got.mechanism, "enzyme inhibition");
        assert!(got.revised);
        let first = got.mech_vec.clone();
        r.revise_case("a", "enzyme inhibition", &embedder).unwrap();
        let bits = |e: &TextEmbedding| e.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r.get("a").unwrap().mech_vec), bits(&first));
        assert!(matches!(r.revise_case("zz", "x", &embedder), Err(RepoError::UnknownId(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        let mut r = repo();
        r.insert_case(case("a", 0, &[0.3, 0.7], &[0.1, -0.2], &[1.0, 0.0])).unwrap();
        r.insert_case(case("b", 2, &[0.9, 0.1], &[0.0, 0.0], &[0.5, 0.5])).unwrap();
        r.save(&path).unwrap();
        assert_eq!(Repository::load(&path).unwrap(), r);

        let empty = repo();
        empty.save(&path).unwrap();
        assert_eq!(Repository::load(&path).unwrap(), empty);
    }

    #[test]
    fn truncated_file_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        let mut r = repo();
        for id in ["a", "b", "c"] {
            r.insert_case(case(id, 0, &[0.3, 0.7], &[0.1, -0.2], &[1.0, 0.0])).unwrap();
        }
        r.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() - text.lines().last().unwrap().len() / 2 - 1;
        std::fs::write(&path, &text[..cut]).unwrap();
        match Repository::load(&path) {
            Err(RepoError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let whole_lines: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, whole_lines).unwrap();
        assert!(matches!(Repository::load(&path), Err(RepoError::Parse { line: 4, .. })));
    }

    #[test]
    fn majority_vote_rules() {
        let mut r = repo();
        r.insert_case(case("a", 3, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        r.insert_case(case("b", 1, &[1.0, 0.1], &[1.0, 0.0], &[1.0, 0.0])).unwrap();
        r.insert_case(case("c", 1, &[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0])).unwrap();
        let q = query(&[1.0, 0.0], &[1.0, 0.0], 0.5, 3);
        let top = r.retrieve(&q).unwrap();
        assert_eq!(majority_label(&top), Some(1));
        let top2 = r.retrieve(&query(&[1.0, 0.0], &[1.0, 0.0], 0.5, 2)).unwrap();
        // one vote each; label 3 has the higher summed score
        assert_eq!(majority_label(&top2), Some(3));
        let lq = LabeledQuery {
            query: q,
            labels: vec![3],
        };
        assert_eq!(retrieval_majority_accuracy(&r, &[lq.clone()], 0.5, 1).unwrap(), 1.0);
        assert_eq!(retrieval_majority_accuracy(&r, &[lq], 0.5, 3).unwrap(), 0.0);
        assert!(retrieval_majority_accuracy(&r, &[], 0.5, 1).is_err());
    }
}
