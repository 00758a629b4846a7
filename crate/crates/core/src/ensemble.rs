//! Labeled datasets, stratified k-fold splits, minority oversampling and
//! mean-pooling of member probabilities.
//!
//! Fold ensembles (k models from one architecture) and multi-model ensembles
//! both reduce through [`mean_pool_probs`].

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} has label {label}, expected 0 or 1")]
    InvalidLabel { id: String, label: u8 },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("{records} records cannot fill {k} folds")]
    TooFewRecords { records: usize, k: usize },
    #[error("class {0} has no records")]
    EmptyClass(u8),
    #[error("member {member} has {got} predictions, expected {expected}")]
    LengthMismatch {
        member: usize,
        expected: usize,
        got: usize,
    },
    #[error("no ensemble members")]
    EmptyEnsemble,
    #[error("fold split does not match dataset: {0}")]
    SplitMismatch(String),
}

/// One classification record, as stored in JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub label: u8,
}

impl Record {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Binary-labeled records with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledDataset {
    records: Vec<Record>,
}

impl LabeledDataset {
    pub fn new(records: Vec<Record>) -> Result<Self, EnsembleError> {
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if r.label > 1 {
                return Err(EnsembleError::InvalidLabel {
                    id: r.id.clone(),
                    label: r.label,
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(EnsembleError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.is_positive()).count();
        (self.records.len() - pos, pos)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(Record::is_positive).collect()
    }

    /// Records whose ids are in `ids`, in dataset order.
    pub fn subset(&self, ids: &HashSet<&str>) -> LabeledDataset {
        LabeledDataset {
            records: self
                .records
                .iter()
                .filter(|r| ids.contains(r.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    fn require_both_classes(&self) -> Result<(), EnsembleError> {
        match self.class_counts() {
            (0, _) => Err(EnsembleError::EmptyClass(0)),
            (_, 0) => Err(EnsembleError::EmptyClass(1)),
            _ => Ok(()),
        }
    }
}

/// Partition of record ids into `k` folds. Serializes as the fold file
/// `{"k", "seed", "folds": [[id, ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    /// Ids outside fold `i`, i.e. the training portion when fold `i` is held out.
    pub fn train_ids(&self, i: usize) -> HashSet<&str> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().map(String::as_str))
            .collect()
    }

    pub fn fold_ids(&self, i: usize) -> HashSet<&str> {
        self.folds[i].iter().map(String::as_str).collect()
    }

    /// Checks that the folds partition exactly the ids of `ds`.
    pub fn check_against(&self, ds: &LabeledDataset) -> Result<(), EnsembleError> {
        if self.folds.len() != self.k {
            return Err(EnsembleError::SplitMismatch(format!(
                "{} folds listed for k = {}",
                self.folds.len(),
                self.k
            )));
        }
        let mut seen = HashSet::new();
        for id in self.folds.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(EnsembleError::SplitMismatch(format!(
                    "id {id:?} appears twice"
                )));
            }
        }
        let expected: HashSet<&str> = ds.records.iter().map(|r| r.id.as_str()).collect();
        if let Some(id) = seen.symmetric_difference(&expected).next() {
            return Err(EnsembleError::SplitMismatch(format!(
                "id {id:?} is not in both the split and the dataset"
            )));
        }
        Ok(())
    }
}

/// Seeded stratified k-fold split.
///
/// Each class is shuffled independently, then records are dealt round-robin
/// over the folds, negatives first, with positives continuing where the
/// negatives stopped. This keeps both fold sizes and per-fold class counts
/// within one of each other.
pub fn stratified_kfold(
    ds: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<FoldSplit, EnsembleError> {
    if k < 2 {
        return Err(EnsembleError::InvalidK(k));
    }
    if ds.len() < k {
        return Err(EnsembleError::TooFewRecords {
            records: ds.len(),
            k,
        });
    }
    ds.require_both_classes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for positive in [false, true] {
        let mut ids: Vec<&str> = ds
            .records
            .iter()
            .filter(|r| r.is_positive() == positive)
            .map(|r| r.id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next].push(id.to_string());
            next = (next + 1) % k;
        }
    }
    Ok(FoldSplit { k, seed, folds })
}

/// Balances classes by resampling the minority with replacement.
///
/// Originals are kept in order; duplicates follow, with ids `"<id>~dup<n>"`.
/// A balanced dataset is returned unchanged.
pub fn oversample(ds: &LabeledDataset, seed: u64) -> Result<LabeledDataset, EnsembleError> {
    ds.require_both_classes()?;
    let (neg, pos) = ds.class_counts();
    if neg == pos {
        return Ok(ds.clone());
    }
    let minority_positive = pos < neg;
    let minority: Vec<&Record> = ds
        .records
        .iter()
        .filter(|r| r.is_positive() == minority_positive)
        .collect();
    let missing = neg.abs_diff(pos);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: HashSet<String> = ds.records.iter().map(|r| r.id.clone()).collect();
    let mut copies: BTreeMap<&str, usize> = BTreeMap::new();
    let mut records = ds.records.clone();
    for _ in 0..missing {
        let src = minority[rng.random_range(0..minority.len())];
        let n = copies.entry(&src.id).or_insert(0);
        let id = loop {
            *n += 1;
            let candidate = format!("{}~dup{}", src.id, n);
            if !taken.contains(&candidate) {
                break candidate;
            }
        };
        taken.insert(id.clone());
        records.push(Record { id, ..src.clone() });
    }
    Ok(LabeledDataset { records })
}

/// Elementwise arithmetic mean of member probability vectors, reduced in
/// member order.
pub fn mean_pool_probs(members: &[Vec<f64>]) -> Result<Vec<f64>, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::EmptyEnsemble)?;
    let len = first.len();
    for (member, m) in members.iter().enumerate() {
        if m.len() != len {
            return Err(EnsembleError::LengthMismatch {
                member,
                expected: len,
                got: m.len(),
            });
        }
    }
    let mut out = vec![0.0; len];
    for m in members {
        for (acc, p) in out.iter_mut().zip(m) {
            *acc += p;
        }
    }
    let count = members.len() as f64;
    for p in &mut out {
        *p /= count;
    }
    Ok(out)
}

/// Label 1 iff `p >= threshold`.
pub fn threshold_labels(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}
