use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pearson: f64,
    pub spearman: f64,
}

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 pairs, got {}", pred.len())));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("inputs must be finite".into()));
    }
    Ok(())
}

/// Product-moment correlation, clamped to [−1, 1] against rounding.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(truth) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let end = (k..order.len())
            .find(|&e| values[order[e]] != values[order[k]])
            .unwrap_or(order.len());
        let mean_rank = (k + 1 + end) as f64 / 2.0;
        for &i in &order[k..end] {
            ranks[i] = mean_rank;
        }
        k = end;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    pearson(&average_ranks(pred), &average_ranks(truth))
}

pub fn correlations(pred: &[f64], truth: &[f64]) -> Result<Correlations> {
    Ok(Correlations {
        pearson: pearson(pred, truth)?,
        spearman: spearman(pred, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reflection() {
        let t = [1.0, 4.0, 2.0, 8.0, 5.0];
        let c = correlations(&t, &t).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let c = correlations(&neg, &t).unwrap();
        assert!((c.pearson + 1.0).abs() < 1e-12 && (c.spearman + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_is_rank_perfect_only() {
        let t: Vec<f64> = (-5..=5).map(f64::from).chain([9.0]).collect();
        let cube: Vec<f64> = t.iter().map(|v| v * v * v).collect();
        let c = correlations(&cube, &t).unwrap();
        assert!((c.spearman - 1.0).abs() < 1e-12);
        assert!(c.pearson < 0.99);
    }

    #[test]
    fn ties_get_mean_rank() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
