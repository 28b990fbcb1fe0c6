//! Slide-level fusion of per-patch predictions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub label: u8,
    pub positive_fraction: f64,
    pub mean_prob: f64,
}

/// Unweighted majority vote over patch labels (`prob ≥ 0.5` is positive).
/// An exact split is decided by the mean probability, positive when ≥ 0.5.
pub fn majority_vote(probs: &[f64]) -> Result<Vote> {
    if probs.is_empty() {
        return Err(Error::Aggregation("no patch predictions to vote over".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Aggregation("patch probabilities must lie in [0, 1]".into()));
    }
    let n = probs.len();
    let positives = probs.iter().filter(|&&p| p >= 0.5).count();
    let mean_prob = probs.iter().sum::<f64>() / n as f64;
    let label = match (2 * positives).cmp(&n) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => u8::from(mean_prob >= 0.5),
    };
    Ok(Vote {
        label,
        positive_fraction: positives as f64 / n as f64,
        mean_prob,
    })
}

/// Median patch risk; the mean of the two central order statistics for an
/// even count.
pub fn median_risk(risks: &[f64]) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::Aggregation("no patch risks to aggregate".into()));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::Aggregation("patch risks must be finite".into()));
    }
    Ok(median(risks))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
