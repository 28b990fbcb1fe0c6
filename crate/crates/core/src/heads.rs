//! Output heads: sigmoid + binary cross-entropy for subtype classification,
//! and a Cox partial-likelihood layer producing a log-hazard risk.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryBatch<'a> {
    pub logits: &'a [f64],
    pub labels: &'a [u8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalBatch<'a> {
    /// Log-hazard scores.
    pub risks: &'a [f64],
    /// Survival or censoring time, days.
    pub times: &'a [f64],
    /// 1 = death observed, 0 = censored.
    pub events: &'a [u8],
}

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn predict_prob(logit: f64) -> f64 {
    sigmoid(logit)
}

pub fn predict_label(logit: f64) -> u8 {
    u8::from(predict_prob(logit) >= 0.5)
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// Uses `−log σ(z) = softplus(−z)` and `−log(1 − σ(z)) = softplus(z)`.
pub fn bce_loss(b: &BinaryBatch) -> Result<(f64, Vec<f64>)> {
    let n = b.logits.len();
    if n == 0 || b.labels.len() != n {
        return Err(Error::Shape(format!(
            "binary batch with {} logits and {} labels",
            n,
            b.labels.len()
        )));
    }
    if b.labels.iter().any(|&y| y > 1) {
        return Err(Error::Shape("binary labels must be 0 or 1".into()));
    }
    if b.logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric {
            context: "bce logits".into(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&z, &y) in b.logits.iter().zip(b.labels) {
        let y = f64::from(y);
        loss += y * softplus(-z) + (1.0 - y) * softplus(z);
        grad.push((sigmoid(z) - y) * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Streaming `ln Σ exp(x)`.
#[derive(Debug, Default)]
struct LogSum {
    max: Option<f64>,
    sum: f64,
}

impl LogSum {
    fn add(&mut self, x: f64) {
        match self.max {
            Some(m) if x <= m => self.sum += (x - m).exp(),
            Some(m) => {
                self.sum = self.sum * (m - x).exp() + 1.0;
                self.max = Some(x);
            }
            None => {
                self.max = Some(x);
                self.sum = 1.0;
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.max.is_none()
    }

    fn value(&self) -> f64 {
        self.max.map_or(f64::NEG_INFINITY, |m| m + self.sum.ln())
    }
}

/// Negative Cox log partial likelihood with Breslow ties, divided by the
/// number of observed events, and its gradient w.r.t. the risks.
///
/// Subjects are visited by time descending (stable on input order) so each
/// risk set `{j : t_j ≥ t_i}` is a running prefix sum; tied times share the
/// sum over their whole tie group.
pub fn cox_loss(s: &SurvivalBatch) -> Result<(f64, Vec<f64>)> {
    let n = s.risks.len();
    if n == 0 || s.times.len() != n || s.events.len() != n {
        return Err(Error::Shape(format!(
            "survival batch with {} risks, {} times, {} events",
            n,
            s.times.len(),
            s.events.len()
        )));
    }
    if s.risks.iter().chain(s.times).any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "cox risks/times".into(),
        });
    }
    let n_events = s.events.iter().filter(|&&e| e == 1).count();
    if n_events == 0 {
        return Err(Error::UndefinedLikelihood);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.times[b].total_cmp(&s.times[a]));

    // log of the risk-set sum Σ_{t_j ≥ t_i} exp(r_j), built by tie group from
    // the latest time down, in log space so tiny risk sets cannot underflow
    let mut log_denom = vec![0.0; n];
    let mut running = LogSum::default();
    let mut k = 0;
    while k < n {
        let t = s.times[order[k]];
        let mut end = k;
        while end < n && s.times[order[end]] == t {
            running.add(s.risks[order[end]]);
            end += 1;
        }
        for &i in &order[k..end] {
            log_denom[i] = running.value();
        }
        k = end;
    }

    let mut loss = 0.0;
    for i in 0..n {
        if s.events[i] == 1 {
            loss -= s.risks[i] - log_denom[i];
        }
    }

    // dL/dr_j = −δ_j + exp(r_j) · Σ_{i: δ_i = 1, t_i ≤ t_j} 1/denom_i
    // The sum is accumulated as a log by time ascending, again by tie group.
    // Every such denom_i includes exp(r_j), so each term stays ≤ the count.
    let mut grad = vec![0.0; n];
    let mut acc = LogSum::default();
    let mut k = n;
    while k > 0 {
        let t = s.times[order[k - 1]];
        let mut start = k;
        while start > 0 && s.times[order[start - 1]] == t {
            let i = order[start - 1];
            if s.events[i] == 1 {
                acc.add(-log_denom[i]);
            }
            start -= 1;
        }
        for &j in &order[start..k] {
            let share = if acc.is_empty() { 0.0 } else { (s.risks[j] + acc.value()).exp() };
            grad[j] = share - f64::from(s.events[j]);
        }
        k = start;
    }

    let scale = 1.0 / n_events as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_zero_logit() {
        let (loss, grad) = bce_loss(&BinaryBatch {
            logits: &[0.0],
            labels: &[1],
        })
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_saturates_without_overflow() {
        let (loss, grad) = bce_loss(&BinaryBatch {
            logits: &[100.0, -800.0],
            labels: &[1, 0],
        })
        .unwrap();
        assert!(loss.is_finite() && loss < 1e-40);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (wrong, _) = bce_loss(&BinaryBatch {
            logits: &[-800.0],
            labels: &[1],
        })
        .unwrap();
        assert!((wrong - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bce_rejects_misaligned() {
        assert!(bce_loss(&BinaryBatch {
            logits: &[0.0, 1.0],
            labels: &[1],
        })
        .is_err());
    }

    #[test]
    fn sigmoid_edges() {
        assert_eq!(predict_prob(0.0), 0.5);
        assert_eq!(predict_prob(f64::MAX), 1.0);
        assert_eq!(predict_prob(1e6), 1.0);
        assert_eq!(predict_label(0.0), 1);
        assert_eq!(predict_label(-1e-9), 0);
    }

    #[test]
    fn cox_equal_risk_two_subjects() {
        let (loss, _) = cox_loss(&SurvivalBatch {
            risks: &[0.0, 0.0],
            times: &[1.0, 2.0],
            events: &[1, 1],
        })
        .unwrap();
        assert!((loss - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cox_one_event_direct_formula() {
        let (loss, _) = cox_loss(&SurvivalBatch {
            risks: &[1.0, 0.0],
            times: &[1.0, 2.0],
            events: &[1, 0],
        })
        .unwrap();
        let expected = (1.0f64.exp() + 1.0).ln() - 1.0;
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn cox_without_events_is_undefined() {
        let err = cox_loss(&SurvivalBatch {
            risks: &[0.3, 0.1],
            times: &[1.0, 2.0],
            events: &[0, 0],
        })
        .unwrap_err();
        assert!(matches!(err, Error::UndefinedLikelihood));
    }

    #[test]
    fn cox_handles_huge_risks() {
        let (loss, grad) = cox_loss(&SurvivalBatch {
            risks: &[900.0, 0.0, -900.0],
            times: &[1.0, 2.0, 3.0],
            events: &[1, 1, 1],
        })
        .unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
