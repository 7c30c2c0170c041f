use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DdiDataset, EntityId, GraphError, Result};

/// Partition of a dataset's pairs by how many endpoints are emerging drugs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub emerging_drugs: Vec<EntityId>,
    pub train: Vec<usize>,
    pub valid_s1: Vec<usize>,
    pub test_s1: Vec<usize>,
    pub valid_s2: Vec<usize>,
    pub test_s2: Vec<usize>,
    #[serde(default)]
    pub valid_s0: Vec<usize>,
    #[serde(default)]
    pub test_s0: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    S0Valid,
    S0Test,
    S1Valid,
    S1Test,
    S2Valid,
    S2Test,
}

impl SplitName {
    pub fn is_test(self) -> bool {
        matches!(self, SplitName::S0Test | SplitName::S1Test | SplitName::S2Test)
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "s0-valid" => SplitName::S0Valid,
            "s0-test" => SplitName::S0Test,
            "s1-valid" => SplitName::S1Valid,
            "s1-test" => SplitName::S1Test,
            "s2-valid" => SplitName::S2Valid,
            "s2-test" => SplitName::S2Test,
            other => return Err(format!("unknown split {other:?} (expected s0|s1|s2 - valid|test)")),
        })
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::S0Valid => "s0-valid",
            SplitName::S0Test => "s0-test",
            SplitName::S1Valid => "s1-valid",
            SplitName::S1Test => "s1-test",
            SplitName::S2Valid => "s2-valid",
            SplitName::S2Test => "s2-test",
        })
    }
}

impl SplitSpec {
    pub fn pairs(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::S0Valid => &self.valid_s0,
            SplitName::S0Test => &self.test_s0,
            SplitName::S1Valid => &self.valid_s1,
            SplitName::S1Test => &self.test_s1,
            SplitName::S2Valid => &self.valid_s2,
            SplitName::S2Test => &self.test_s2,
        }
    }

    /// Every pair index that must never feed knowledge-building.
    pub fn test_pairs(&self) -> BTreeSet<usize> {
        self.test_s0
            .iter()
            .chain(&self.test_s1)
            .chain(&self.test_s2)
            .copied()
            .collect()
    }

    pub fn is_emerging(&self, e: EntityId) -> bool {
        self.emerging_drugs.binary_search(&e).is_ok()
    }

    /// Checks the structural split invariants against `dataset`.
    pub fn validate(&self, dataset: &DdiDataset) -> Result<()> {
        let fail = |msg: String| Err(GraphError::Split(msg));
        let emerging_count = |i: usize| {
            let p = &dataset.pairs[i];
            self.is_emerging(p.u) as usize + self.is_emerging(p.v) as usize
        };
        let mut seen = vec![false; dataset.pairs.len()];
        let groups: [(&[usize], usize, &str); 7] = [
            (&self.train, 0, "train"),
            (&self.valid_s0, 0, "valid_s0"),
            (&self.test_s0, 0, "test_s0"),
            (&self.valid_s1, 1, "valid_s1"),
            (&self.test_s1, 1, "test_s1"),
            (&self.valid_s2, 2, "valid_s2"),
            (&self.test_s2, 2, "test_s2"),
        ];
        for (pairs, expected, name) in groups {
            for &i in pairs {
                if i >= dataset.pairs.len() {
                    return fail(format!("{name} references pair {i} beyond dataset"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return fail(format!("pair {i} appears in more than one split"));
                }
                if emerging_count(i) != expected {
                    return fail(format!(
                        "pair {i} in {name} has {} emerging endpoints, expected {expected}",
                        emerging_count(i)
                    ));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return fail(format!("pair {i} is not assigned to any split"));
        }
        if !self.emerging_drugs.windows(2).all(|w| w[0] < w[1]) {
            return fail("emerging_drugs must be sorted and unique".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec: SplitSpec = serde_json::from_str(&text).map_err(|e| GraphError::Invalid {
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.emerging_drugs.sort_unstable();
        spec.emerging_drugs.dedup();
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("split spec serializes");
        fs::write(path, json + "\n").map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Draws `floor(emerging_fraction · #drugs)` emerging drugs and partitions
/// pairs into train (no emerging endpoint), S1 (one) and S2 (two). S1 and S2
/// are each halved into valid/test. When `s0_fraction > 0`, that share of the
/// non-emerging pairs is held out as S0 valid/test instead of training.
pub fn make_splits(
    dataset: &DdiDataset,
    emerging_fraction: f64,
    s0_fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if dataset.pairs.is_empty() {
        return Err(GraphError::Split("dataset has no pairs".into()));
    }
    if !(emerging_fraction > 0.0 && emerging_fraction < 1.0) {
        return Err(GraphError::Split(format!(
            "emerging fraction {emerging_fraction} must lie in (0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&s0_fraction) {
        return Err(GraphError::Split(format!("s0 fraction {s0_fraction} must lie in [0, 1)")));
    }
    let mut drugs = dataset.drugs();
    let n_emerging = (emerging_fraction * drugs.len() as f64).floor() as usize;
    if n_emerging == 0 {
        return Err(GraphError::Split(format!(
            "fraction {emerging_fraction} of {} drugs yields no emerging drug",
            drugs.len()
        )));
    }
    if n_emerging >= drugs.len() {
        return Err(GraphError::Split("no existing drug would remain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drugs.shuffle(&mut rng);
    let mut emerging: Vec<EntityId> = drugs[..n_emerging].to_vec();
    emerging.sort_unstable();

    let is_emerging = |e: EntityId| emerging.binary_search(&e).is_ok();
    let (mut s0, mut s1, mut s2) = (Vec::new(), Vec::new(), Vec::new());
    for (i, p) in dataset.pairs.iter().enumerate() {
        match is_emerging(p.u) as u8 + is_emerging(p.v) as u8 {
            0 => s0.push(i),
            1 => s1.push(i),
            _ => s2.push(i),
        }
    }
    let (valid_s1, test_s1) = halve(s1, &mut rng);
    let (valid_s2, test_s2) = halve(s2, &mut rng);
    let (train, valid_s0, test_s0) = if s0_fraction > 0.0 {
        let mut all = s0;
        all.shuffle(&mut rng);
        let held = (s0_fraction * all.len() as f64).floor() as usize;
        let mut train = all.split_off(held);
        train.sort_unstable();
        let (valid, test) = halve(all, &mut rng);
        (train, valid, test)
    } else {
        (s0, Vec::new(), Vec::new())
    };
    Ok(SplitSpec {
        emerging_drugs: emerging,
        train,
        valid_s1,
        test_s1,
        valid_s2,
        test_s2,
        valid_s0,
        test_s0,
        seed,
    })
}

fn halve(mut v: Vec<usize>, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    v.shuffle(rng);
    let cut = v.len() / 2;
    let mut test = v.split_off(cut);
    v.sort_unstable();
    test.sort_unstable();
    (v, test)
}
