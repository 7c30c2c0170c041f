use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};

/// Predicted labels (best first) against the true label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        Err(PipelineError::Metric("no records to score".into()))
    } else {
        Ok(())
    }
}

/// Share of outcomes whose top prediction is a true label.
pub fn accuracy(outcomes: &[Outcome]) -> Result<f64> {
    nonempty(outcomes)?;
    let hits = outcomes
        .iter()
        .filter(|o| o.predicted.first().is_some_and(|p| o.truth.contains(p)))
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True instances of the class.
    pub support: usize,
    pub predicted: usize,
}

/// Per-class precision/recall/F1 of top-1 predictions for labels
/// `0..num_classes`, with 0/0 taken as 0.
pub fn per_class(outcomes: &[Outcome], num_classes: usize) -> Vec<ClassMetrics> {
    let mut tp = vec![0usize; num_classes];
    let mut pred = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for o in outcomes {
        let t = o.truth[0];
        if t < num_classes {
            support[t] += 1;
        }
        if let Some(&p) = o.predicted.first() {
            if p < num_classes {
                pred[p] += 1;
                if p == t {
                    tp[p] += 1;
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], pred[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: c,
                precision,
                recall,
                f1,
                support: support[c],
                predicted: pred[c],
            }
        })
        .collect()
}

/// Macro F1 over the classes that occur in the truth or the predictions.
pub fn f1_macro(outcomes: &[Outcome], num_classes: usize) -> Result<f64> {
    nonempty(outcomes)?;
    let classes = per_class(outcomes, num_classes);
    let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.support + c.predicted > 0).collect();
    Ok(present.iter().map(|c| c.f1).sum::<f64>() / present.len() as f64)
}

/// Macro F1 over all `num_classes` labels, absent ones counting as 0.
pub fn f1_macro_strict(outcomes: &[Outcome], num_classes: usize) -> Result<f64> {
    nonempty(outcomes)?;
    if num_classes == 0 {
        return Err(PipelineError::Metric("no classes".into()));
    }
    let classes = per_class(outcomes, num_classes);
    Ok(classes.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64)
}

/// `|R₁..₅ ∩ T| / |T|`.
pub fn recall_at_5(recommended: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(PipelineError::Metric("empty truth set".into()));
    }
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    let r: BTreeSet<usize> = recommended.iter().take(5).copied().collect();
    Ok(r.intersection(&t).count() as f64 / t.len() as f64)
}

/// DCG of the first five recommendations over the ideal DCG for
/// `min(|T|, 5)` hits, with `log₂(i + 1)` discounts.
pub fn ndcg_at_5(recommended: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(PipelineError::Metric("empty truth set".into()));
    }
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = recommended
        .iter()
        .take(5)
        .enumerate()
        .filter(|(_, r)| t.contains(r))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=t.len().min(5)).map(discount).sum();
    Ok(dcg / idcg)
}

/// Mean of `metric` over all outcomes.
pub fn mean_over(outcomes: &[Outcome], metric: fn(&[usize], &[usize]) -> Result<f64>) -> Result<f64> {
    nonempty(outcomes)?;
    let mut sum = 0.0;
    for o in outcomes {
        sum += metric(&o.predicted, &o.truth)?;
    }
    Ok(sum / outcomes.len() as f64)
}
