//! Evaluation quantities: confusion statistics, ROC/AUC with bootstrap
//! uncertainty, Harrell's concordance index and correlation coefficients.

mod cindex;
mod confusion;
mod correlation;
mod roc;

pub use cindex::{c_index, ConcordanceCounts};
pub use confusion::{confusion_stats, Confusion, ConfusionStats};
pub use correlation::{average_ranks, correlations, pearson, spearman, Correlations};
pub use roc::{bootstrap_auc, roc_auc, roc_curve, write_roc_csv, BootstrapAuc, RocPoint, RocSummary};

/// Scores for a set of subjects with either binary labels or survival outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCohort {
    pub subject_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Binary(Vec<u8>),
    Survival { times: Vec<f64>, events: Vec<u8> },
}

impl ScoredCohort {
    pub fn roc(&self, bootstrap_resamples: usize, seed: u64) -> crate::Result<RocSummary> {
        match &self.outcome {
            Outcome::Binary(labels) => roc_auc(&self.scores, labels, bootstrap_resamples, seed),
            Outcome::Survival { .. } => Err(crate::Error::Roc("cohort has survival outcomes, not labels".into())),
        }
    }

    pub fn c_index(&self) -> crate::Result<f64> {
        match &self.outcome {
            Outcome::Survival { times, events } => c_index(&self.scores, times, events),
            Outcome::Binary(_) => Err(crate::Error::UndefinedCIndex),
        }
    }
}
