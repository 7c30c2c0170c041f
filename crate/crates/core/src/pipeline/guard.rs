use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{PipelineError, Result};
use crate::graph::{DdiDataset, SplitSpec};

/// Why a label is being read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelUse {
    /// Building knowledge: propagation edges, repository cases, revisions.
    Knowledge,
    /// Comparing a finished prediction with the truth.
    Scoring,
}

/// Gatekeeper for dataset labels. Test-split labels may be read for scoring
/// only; every other read is refused and counted.
#[derive(Debug)]
pub struct LabelGuard {
    test_pairs: BTreeSet<usize>,
    reads: AtomicUsize,
    violations: AtomicUsize,
}

impl LabelGuard {
    pub fn new(splits: &SplitSpec) -> Self {
        Self {
            test_pairs: splits.test_pairs(),
            reads: AtomicUsize::new(0),
            violations: AtomicUsize::new(0),
        }
    }

    pub fn labels<'a>(&self, dataset: &'a DdiDataset, pair: usize, usage: LabelUse) -> Result<&'a [usize]> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        if usage == LabelUse::Knowledge && self.test_pairs.contains(&pair) {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return Err(PipelineError::Leakage(format!(
                "label of test pair {pair} requested for knowledge building"
            )));
        }
        dataset
            .pairs
            .get(pair)
            .map(|p| p.labels.as_slice())
            .ok_or_else(|| PipelineError::Config(format!("pair {pair} out of range")))
    }

    /// Checks a whole set of pairs for knowledge use.
    pub fn admit_all(&self, pairs: &[usize]) -> Result<()> {
        for &p in pairs {
            self.reads.fetch_add(1, Ordering::Relaxed);
            if self.test_pairs.contains(&p) {
                self.violations.fetch_add(1, Ordering::Relaxed);
                return Err(PipelineError::Leakage(format!("test pair {p} offered as knowledge")));
            }
        }
        Ok(())
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }
}
