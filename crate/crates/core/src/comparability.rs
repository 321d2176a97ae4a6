//! Comparable-pair predicate and mining.
//!
//! Two rows are comparable iff at most `t_d` discrete features differ, every
//! continuous feature differs by at most `t_c` on the `[0, 1]` view, and the
//! labels agree. Sensitive attributes are unconstrained; each mined pair is
//! tagged with how its sensitive attributes relate for reporting.
//!
//! Mining blocks rows by label and then by pigeonhole over the discrete
//! features: with the discrete columns split into `t_d + 1` groups, any pair
//! within the discrete budget agrees on at least one whole group. Candidate
//! pairs inside a bucket are additionally pruned by a sort-and-window sweep
//! on the first continuous column before the exact predicate runs. The result
//! is exactly the brute-force pair set, sorted by `(i, j)`.

use crate::data::{EncodedDataset, EncodedRow};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityConfig {
    /// Maximum number of differing discrete features.
    pub t_d: usize,
    /// Maximum per-feature continuous gap on the `[0, 1]` view.
    pub t_c: f64,
}

impl Default for ComparabilityConfig {
    fn default() -> Self {
        Self { t_d: 1, t_c: 0.025 }
    }
}

impl ComparabilityConfig {
    pub fn validate(&self, n_discrete: usize) -> Result<()> {
        if self.t_d > n_discrete {
            return Err(Error::Config(format!(
                "t_d = {} exceeds the number of discrete features ({n_discrete})",
                self.t_d
            )));
        }
        if !(0.0..=1.0).contains(&self.t_c) {
            return Err(Error::Config(format!("t_c = {} outside [0, 1]", self.t_c)));
        }
        Ok(())
    }
}

/// How the sensitive attributes of a pair relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensitiveRelation {
    /// Every sensitive feature differs.
    AllDiffer,
    /// At least one differs, at least one matches.
    SomeDiffer,
    /// All sensitive features match.
    NoneDiffer,
}

impl SensitiveRelation {
    pub fn as_str(&self) -> &'static str {
        match self {
            SensitiveRelation::AllDiffer => "all-differ",
            SensitiveRelation::SomeDiffer => "some-differ",
            SensitiveRelation::NoneDiffer => "none-differ",
        }
    }
}

/// A mined comparable pair, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparablePair {
    pub i: u32,
    pub j: u32,
    pub label: u8,
    pub relation: SensitiveRelation,
}

/// The pair predicate on two encoded rows.
pub fn is_comparable(a: &EncodedRow<'_>, b: &EncodedRow<'_>, cfg: &ComparabilityConfig) -> bool {
    if a.label != b.label {
        return false;
    }
    for (x, y) in a.continuous.iter().zip(b.continuous.iter()) {
        if (x - y).abs() > cfg.t_c {
            return false;
        }
    }
    let mut differing = 0;
    for slice in a.discrete_slices {
        let ax = argmax(&a.discrete, slice);
        let bx = argmax(&b.discrete, slice);
        if ax != bx {
            differing += 1;
            if differing > cfg.t_d {
                return false;
            }
        }
    }
    true
}

fn argmax(row: &ndarray::ArrayView1<'_, f64>, slice: &std::ops::Range<usize>) -> usize {
    let mut best = slice.start;
    for k in slice.clone() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Classify the sensitive relation of two rows by value index.
pub fn classify_relation(a: &[u32], b: &[u32]) -> SensitiveRelation {
    debug_assert!(!a.is_empty() && a.len() == b.len());
    let differing = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if differing == a.len() {
        SensitiveRelation::AllDiffer
    } else if differing == 0 {
        SensitiveRelation::NoneDiffer
    } else {
        SensitiveRelation::SomeDiffer
    }
}

/// Row features extracted once for fast pair checks.
struct MiningIndex {
    discrete: Vec<Vec<u32>>,
    sensitive: Vec<Vec<u32>>,
    labels: Vec<u8>,
}

impl MiningIndex {
    fn build(dataset: &EncodedDataset) -> Self {
        let n = dataset.n_rows();
        let nd = dataset.discrete_slices.len();
        let ns = dataset.sensitive_slices.len();
        let mut discrete = vec![Vec::with_capacity(nd); n];
        let mut sensitive = vec![Vec::with_capacity(ns); n];
        for i in 0..n {
            for f in 0..nd {
                discrete[i].push(dataset.discrete_code(i, f));
            }
            for f in 0..ns {
                sensitive[i].push(dataset.sensitive_code(i, f));
            }
        }
        Self { discrete, sensitive, labels: dataset.labels.clone() }
    }

    fn comparable(&self, dataset: &EncodedDataset, i: usize, j: usize, cfg: &ComparabilityConfig) -> bool {
        if self.labels[i] != self.labels[j] {
            return false;
        }
        let (ci, cj) = (dataset.continuous.row(i), dataset.continuous.row(j));
        for (x, y) in ci.iter().zip(cj.iter()) {
            if (x - y).abs() > cfg.t_c {
                return false;
            }
        }
        let mut differing = 0;
        for (x, y) in self.discrete[i].iter().zip(&self.discrete[j]) {
            if x != y {
                differing += 1;
                if differing > cfg.t_d {
                    return false;
                }
            }
        }
        true
    }
}

/// Mine every comparable pair `(i, j)` with `i < j`, sorted by `(i, j)`.
pub fn mine_pairs(dataset: &EncodedDataset, cfg: &ComparabilityConfig) -> Result<Vec<ComparablePair>> {
    cfg.validate(dataset.discrete_slices.len())?;
    let n = dataset.n_rows();
    let index = MiningIndex::build(dataset);
    let n_d = dataset.discrete_slices.len();
    let n_groups = cfg.t_d + 1;

    // Bucket rows by label and by the exact codes of each pigeonhole group.
    let mut candidate_sets: Vec<Vec<u32>> = Vec::new();
    if n_d == 0 {
        let mut by_label: HashMap<u8, Vec<u32>> = HashMap::new();
        for i in 0..n {
            by_label.entry(index.labels[i]).or_default().push(i as u32);
        }
        candidate_sets.extend(by_label.into_values());
    } else {
        for g in 0..n_groups {
            let features: Vec<usize> = (0..n_d).filter(|f| f % n_groups == g).collect();
            let mut buckets: HashMap<(u8, Vec<u32>), Vec<u32>> = HashMap::new();
            for i in 0..n {
                let key: Vec<u32> = features.iter().map(|&f| index.discrete[i][f]).collect();
                buckets.entry((index.labels[i], key)).or_default().push(i as u32);
            }
            candidate_sets.extend(buckets.into_values().filter(|b| b.len() > 1));
        }
    }

    // Inside each bucket, sweep a window over the first continuous column,
    // then verify the exact predicate.
    let has_cont = dataset.n_continuous() > 0;
    let verified: Vec<Vec<(u32, u32)>> = candidate_sets
        .par_iter()
        .map(|bucket| {
            let mut members = bucket.clone();
            if has_cont {
                members.sort_by(|&a, &b| {
                    dataset.continuous[[a as usize, 0]]
                        .partial_cmp(&dataset.continuous[[b as usize, 0]])
                        .unwrap()
                        .then(a.cmp(&b))
                });
            }
            let mut found = Vec::new();
            for (pos, &a) in members.iter().enumerate() {
                for &b in &members[pos + 1..] {
                    if has_cont {
                        let gap = dataset.continuous[[b as usize, 0]]
                            - dataset.continuous[[a as usize, 0]];
                        if gap > cfg.t_c {
                            break;
                        }
                    }
                    let (i, j) = if a < b { (a, b) } else { (b, a) };
                    if index.comparable(dataset, i as usize, j as usize, cfg) {
                        found.push((i, j));
                    }
                }
            }
            found
        })
        .collect();

    let mut unique: HashSet<(u32, u32)> = HashSet::new();
    for bucket in verified {
        unique.extend(bucket);
    }
    let mut pairs: Vec<ComparablePair> = unique
        .into_iter()
        .map(|(i, j)| ComparablePair {
            i,
            j,
            label: index.labels[i as usize],
            relation: classify_relation(&index.sensitive[i as usize], &index.sensitive[j as usize]),
        })
        .collect();
    pairs.sort_by_key(|p| (p.i, p.j));
    Ok(pairs)
}

/// Partition pairs by shared label: `(positive, negative)`.
pub fn split_pairs(pairs: &[ComparablePair]) -> (Vec<ComparablePair>, Vec<ComparablePair>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &p in pairs {
        if p.label == 1 {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    (pos, neg)
}

/// Write pairs as CSV (`i,j,label,relation`).
pub fn write_pairs_csv<W: Write>(pairs: &[ComparablePair], mut w: W) -> Result<()> {
    writeln!(w, "i,j,label,relation")?;
    for p in pairs {
        writeln!(w, "{},{},{},{}", p.i, p.j, p.label, p.relation.as_str())?;
    }
    Ok(())
}
