use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Confusion {
    pub fn count(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} truth labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(Error::Shape("labels must be 0 or 1".into())),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn stats(&self) -> Result<ConfusionStats> {
        let positives = self.tp + self.fn_;
        let negatives = self.tn + self.fp;
        if positives == 0 {
            return Err(Error::UndefinedStatistic(
                "truth has no positive-class subjects; sensitivity undefined".into(),
            ));
        }
        if negatives == 0 {
            return Err(Error::UndefinedStatistic(
                "truth has no negative-class subjects; specificity undefined".into(),
            ));
        }
        Ok(ConfusionStats {
            accuracy: (self.tp + self.tn) as f64 / self.total() as f64,
            sensitivity: self.tp as f64 / positives as f64,
            specificity: self.tn as f64 / negatives as f64,
        })
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Accuracy, sensitivity (TP/(TP+FN)) and specificity (TN/(TN+FP)); label 1
/// is the positive class.
pub fn confusion_stats(pred: &[u8], truth: &[u8]) -> Result<ConfusionStats> {
    Confusion::count(pred, truth)?.stats()
}
