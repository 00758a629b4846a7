//! Positive-class binary P/R/F1 and strict-match NER P/R/F1.

use std::collections::HashSet;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::EntityMention;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
}

/// Confusion counts. Adds up across documents for micro averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl MatchCounts {
    pub fn scores(self) -> PrfScores {
        PrfScores::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Report printed as `{precision, recall, f1, tp, fp, fn}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl PrfScores {
    /// Zero denominators give 0 rather than NaN.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    pub fn counts(&self) -> MatchCounts {
        MatchCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

pub fn binary_counts(preds: &[bool], golds: &[bool]) -> Result<MatchCounts, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut c = MatchCounts::default();
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn binary_prf(preds: &[bool], golds: &[bool]) -> Result<PrfScores, EvalError> {
    binary_counts(preds, golds).map(MatchCounts::scores)
}

/// A prediction is a true positive only when a gold mention has the same type
/// and the same token index set. Duplicates on either side count once.
pub fn ner_strict_counts(pred: &[EntityMention], gold: &[EntityMention]) -> MatchCounts {
    let pred: HashSet<&EntityMention> = pred.iter().collect();
    let gold: HashSet<&EntityMention> = gold.iter().collect();
    let tp = pred.intersection(&gold).count();
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn ner_strict_prf(pred: &[EntityMention], gold: &[EntityMention]) -> PrfScores {
    ner_strict_counts(pred, gold).scores()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(t: &str, idx: &[usize]) -> EntityMention {
        EntityMention {
            type_label: t.into(),
            token_indices: idx.to_vec(),
        }
    }

    #[test]
    fn binary_examples() {
        let golds = [true, false, true, true];
        let s = binary_prf(&golds, &golds).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        // tp = 2, fp = 1, fn = 1
        let preds = [true, true, true, false, false];
        let golds = [true, true, false, true, false];
        let s = binary_prf(&preds, &golds).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 1));
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 2.0 / 3.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);

        let s = binary_prf(&[false, false], &[true, false]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        assert_eq!(
            binary_prf(&[true], &[]),
            Err(EvalError::LengthMismatch { preds: 1, golds: 0 })
        );
    }

    #[test]
    fn ner_examples() {
        let g = [m("SYMPTOM", &[1, 2])];
        assert_eq!(ner_strict_prf(&g, &g).f1, 1.0);
        assert_eq!(ner_strict_prf(&[m("SYMPTOM", &[1])], &g).f1, 0.0);
        let s = ner_strict_prf(
            &[m("A", &[0]), m("B", &[2, 3])],
            &[m("A", &[0]), m("B", &[2])],
        );
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 1));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        // type must match too
        assert_eq!(ner_strict_prf(&[m("A", &[1, 2])], &g).tp, 0);
        // duplicates count once
        assert_eq!(ner_strict_prf(&[g[0].clone(), g[0].clone()], &g).fp, 0);
    }

    #[test]
    fn report_field_names() {
        let js = serde_json::to_string(&PrfScores::from_counts(1, 0, 0)).unwrap();
        assert_eq!(
            js,
            r#"{"precision":1.0,"recall":1.0,"f1":1.0,"tp":1,"fp":0,"fn":0}"#
        );
    }

    fn mentions() -> impl Strategy<Value = Vec<EntityMention>> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["A", "B"]),
                prop::collection::btree_set(0usize..6, 1..3),
            )
                .prop_map(|(t, s)| m(t, &s.into_iter().collect::<Vec<_>>())),
            0..6,
        )
    }

    proptest! {
        #[test]
        fn swap_symmetry(p in mentions(), g in mentions()) {
            let a = ner_strict_prf(&p, &g);
            let b = ner_strict_prf(&g, &p);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((a.f1 - b.f1).abs() < 1e-15);
            for v in [a.precision, a.recall, a.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if a.precision + a.recall > 0.0 {
                prop_assert!((a.f1 - 2.0 * a.precision * a.recall / (a.precision + a.recall)).abs() < 1e-15);
            }
        }

        #[test]
        fn monotone_in_added_predictions(p in mentions(), g in mentions(), extra in mentions()) {
            let base = ner_strict_prf(&p, &g);
            let correct: Vec<_> = p.iter().cloned().chain(g.iter().take(1).cloned()).collect();
            prop_assert!(ner_strict_prf(&correct, &g).recall >= base.recall);
            let wrong: Vec<_> = extra.into_iter().filter(|e| !g.contains(e)).collect();
            let more: Vec<_> = p.iter().cloned().chain(wrong).collect();
            prop_assert!(ner_strict_prf(&more, &g).precision <= base.precision + 1e-15);
        }
    }
}
