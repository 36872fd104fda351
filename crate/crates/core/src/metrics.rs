//! Window-level confusion counts and the derived scores.

use crate::model::{classify_at, ModelParameters};
use crate::pipeline::SequenceSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Counts predictions against ground truth, pairing elements in order.
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    /// Share of positive ground-truth labels.
    pub fn positive_rate(&self) -> f64 {
        ratio(self.tp + self.fn_, self.total())
    }

    /// Expected F1 of a predictor that flags each window independently with
    /// probability equal to the positive rate: precision and recall both
    /// equal that rate, so F1 does too.
    pub fn random_baseline_f1(&self) -> f64 {
        self.positive_rate()
    }

    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            confusion: *self,
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

/// `num / den`, or 0 when `den` is 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classifies every test window at `threshold` and scores it.
pub fn evaluate(model: &ModelParameters, test: &SequenceSet, threshold: f64) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let predicted = classify_at(model, test, threshold)?;
    Ok(Confusion::from_labels(&predicted, test.targets()).metrics())
}
