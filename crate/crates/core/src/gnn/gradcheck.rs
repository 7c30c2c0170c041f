use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::encoder::{loss_and_grad, LossMode, TrainingInstance};
use super::{GnnError, GnnParams, Result};
use crate::graph::KnowledgeGraph;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged by absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub worst_coordinate: usize,
    pub worst_description: String,
    pub coordinates_checked: usize,
    pub nonzero_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_relative_error < threshold
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Picks `samples` coordinates: half from where the analytic gradient is
/// nonzero, the rest uniformly from the whole parameter vector.
pub fn sample_coordinates(analytic: &GnnParams, samples: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<usize> = analytic
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != 0.0)
        .map(|(i, _)| i)
        .collect();
    let want_support = (samples / 2).min(support.len());
    let mut coords: Vec<usize> = sample(&mut rng, support.len(), want_support)
        .into_iter()
        .map(|k| support[k])
        .collect();
    let rest = (samples - want_support).min(analytic.len());
    coords.extend(sample(&mut rng, analytic.len(), rest));
    coords.sort_unstable();
    coords.dedup();
    coords
}

/// Compares `analytic` against central finite differences at `coords`.
pub fn compare_gradients(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    inst: &TrainingInstance<'_>,
    mode: LossMode,
    analytic: &GnnParams,
    epsilon: f64,
    coords: &[usize],
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(GnnError::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != params.len() {
        return Err(GnnError::Shape("gradient and parameters differ in length".into()));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst_coordinate: coords.first().copied().unwrap_or(0),
        worst_description: String::new(),
        coordinates_checked: coords.len(),
        nonzero_checked: 0,
    };
    for &i in coords {
        let original = probe.as_slice()[i];
        probe.as_mut_slice()[i] = original + epsilon;
        let (plus, _) = loss_and_grad(&probe, graph, inst, mode, false)?;
        probe.as_mut_slice()[i] = original - epsilon;
        let (minus, _) = loss_and_grad(&probe, graph, inst, mode, false)?;
        probe.as_mut_slice()[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.as_slice()[i];
        if a != 0.0 {
            report.nonzero_checked += 1;
        }
        let rel = relative_error(a, numeric);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_coordinate = i;
        }
    }
    report.worst_description = params.describe_coordinate(report.worst_coordinate);
    Ok(report)
}

/// Checks the hand-derived gradient of one instance on `samples` sampled
/// coordinates.
pub fn grad_check(
    params: &GnnParams,
    graph: &KnowledgeGraph,
    inst: &TrainingInstance<'_>,
    mode: LossMode,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad(params, graph, inst, mode, true)?;
    let analytic = analytic.expect("gradient requested");
    let coords = sample_coordinates(&analytic, samples, seed);
    compare_gradients(params, graph, inst, mode, &analytic, epsilon, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{hashed_embedding, TextEmbedding};
    use crate::gnn::{Activation, GnnShape};
    use crate::graph::{DdiDataset, EntityRegistry, TaskMode};

    fn fixture() -> (KnowledgeGraph, EntityRegistry) {
        let kg = "a\tbinds\tg1\ng1\tbinds\tb\na\ttargets\tg2\ng2\tregulates\tg1\ng2\ttargets\tb\nb\ttargets\tg3\n";
        let ddi = "a\tc\tr0\nc\tb\tr1\n";
        let mut reg = EntityRegistry::new();
        let kg = KnowledgeGraph::parse_triples(kg, &mut reg).unwrap();
        let ds = DdiDataset::parse(ddi, TaskMode::Multiclass, &mut reg).unwrap();
        (kg.merge_for_propagation(&reg, &ds, &[0, 1]), reg)
    }

    fn shape(g: &KnowledgeGraph, layers: usize) -> GnnShape {
        GnnShape {
            layers,
            dim: 4,
            embed_dim: 8,
            num_relations: g.num_relations(),
            num_labels: 3,
            activation: Activation::Relu,
        }
    }

    fn emb(s: &str) -> TextEmbedding {
        hashed_embedding(s, 8).unwrap()
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let (g, reg) = fixture();
        let (fa, fb) = (emb("alpha drug"), emb("beta drug"));
        let labels = [2];
        for (mode, negatives) in [(LossMode::SoftmaxCe, vec![]), (LossMode::SigmoidBce, vec![0, 1])] {
            for seed in 0..3 {
                let p = GnnParams::init(shape(&g, 2), seed).unwrap();
                let inst = TrainingInstance {
                    u: reg.get("a").unwrap(),
                    v: reg.get("b").unwrap(),
                    f_u: &fa,
                    f_v: &fb,
                    labels: &labels,
                    negatives: negatives.clone(),
                    mask_own_edges: false,
                };
                let r = grad_check(&p, &g, &inst, mode, 1e-5, 60, seed).unwrap();
                assert!(r.passes(1e-4), "{mode:?} seed {seed}: {r:?}");
                assert!(r.nonzero_checked >= 20);
            }
        }
    }

    #[test]
    fn unreachable_pair_only_head_bias_moves() {
        let (g, reg) = fixture();
        let (fa, fg) = (emb("a"), emb("g3"));
        let labels = [0];
        let p = GnnParams::init(shape(&g, 1), 5).unwrap();
        // a and g3 are three hops apart, so nothing reaches at L = 1
        let inst = TrainingInstance {
            u: reg.get("a").unwrap(),
            v: reg.get("g3").unwrap(),
            f_u: &fa,
            f_v: &fg,
            labels: &labels,
            negatives: vec![],
            mask_own_edges: false,
        };
        let (_, grad) = loss_and_grad(&p, &g, &inst, LossMode::SoftmaxCe, true).unwrap();
        let grad = grad.unwrap();
        let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad.as_slice()[i] != 0.0).collect();
        assert!(nonzero.iter().all(|&i| p.describe_coordinate(i) == "score_b"));
        let r = grad_check(&p, &g, &inst, LossMode::SoftmaxCe, 1e-5, 60, 1).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (g, reg) = fixture();
        let (fa, fb) = (emb("alpha drug"), emb("beta drug"));
        let labels = [1];
        let p = GnnParams::init(shape(&g, 2), 2).unwrap();
        let inst = TrainingInstance {
            u: reg.get("a").unwrap(),
            v: reg.get("b").unwrap(),
            f_u: &fa,
            f_v: &fb,
            labels: &labels,
            negatives: vec![],
            mask_own_edges: false,
        };
        let (_, grad) = loss_and_grad(&p, &g, &inst, LossMode::SoftmaxCe, true).unwrap();
        let mut grad = grad.unwrap();
        let coords = sample_coordinates(&grad, 50, 3);
        let target = coords[coords.len() / 2];
        grad.as_mut_slice()[target] += 1.0;
        let r = compare_gradients(&p, &g, &inst, LossMode::SoftmaxCe, &grad, 1e-5, &coords).unwrap();
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst_coordinate, target);
    }

    #[test]
    fn epsilon_range_enforced() {
        let (g, reg) = fixture();
        let f = emb("x");
        let labels = [0];
        let p = GnnParams::init(shape(&g, 1), 0).unwrap();
        let inst = TrainingInstance {
            u: reg.get("a").unwrap(),
            v: reg.get("b").unwrap(),
            f_u: &f,
            f_v: &f,
            labels: &labels,
            negatives: vec![],
            mask_own_edges: false,
        };
        assert!(grad_check(&p, &g, &inst, LossMode::SoftmaxCe, 1e-2, 10, 0).is_err());
    }
}
