use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `≥ threshold` are called positive. The first point uses +∞,
    /// written as the string `"inf"` in JSON.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Raw::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad threshold `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAuc {
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Roc(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Roc("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.iter().filter(|&&l| l == 0).count() as u64;
    if pos + neg != labels.len() as u64 {
        return Err(Error::Roc("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Roc(format!(
            "both classes required, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Sweeps every distinct score as a threshold, highest first. Returns the
/// curve and its trapezoidal area.
///
/// The area is accumulated as the integer `Σ ΔFP·(TP_prev + TP_new)` and
/// divided by `2·P·N` once, so it equals the Mann–Whitney statistic (ties
/// counted one half) exactly.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] == 1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            k += 1;
        }
        area2 += u128::from(dfp) * u128::from(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64;
    Ok((points, auc))
}

/// Stratified nonparametric bootstrap of the AUC: each resample draws the
/// positives and the negatives with replacement within their own class, so
/// every resample has both classes. Resample `b` uses ChaCha stream `b` of
/// `seed`, which keeps results independent of the worker count.
pub fn bootstrap_auc(scores: &[f64], labels: &[u8], resamples: usize, seed: u64) -> Result<BootstrapAuc> {
    class_counts(scores, labels)?;
    if resamples < 100 {
        return Err(Error::Config(format!("bootstrap needs at least 100 resamples, got {resamples}")));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();

    let aucs: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut s = Vec::with_capacity(labels.len());
            let mut l = Vec::with_capacity(labels.len());
            for (class, members) in [(1u8, &positives), (0u8, &negatives)] {
                for _ in 0..members.len() {
                    s.push(scores[members[rng.random_range(0..members.len())]]);
                    l.push(class);
                }
            }
            roc_curve(&s, &l).map(|(_, auc)| auc)
        })
        .collect::<Result<_>>()?;

    let mean = aucs.iter().sum::<f64>() / resamples as f64;
    let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (resamples - 1) as f64;
    let mut sorted = aucs;
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapAuc {
        se: var.sqrt(),
        ci_low: percentile(&sorted, 0.025),
        ci_high: percentile(&sorted, 0.975),
    })
}

/// Linear interpolation between order statistics at rank `q·(n − 1)`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn roc_auc(scores: &[f64], labels: &[u8], resamples: usize, seed: u64) -> Result<RocSummary> {
    let (points, auc) = roc_curve(scores, labels)?;
    let boot = bootstrap_auc(scores, labels, resamples, seed)?;
    Ok(RocSummary {
        points,
        auc,
        se: boot.se,
        ci_low: boot.ci_low,
        ci_high: boot.ci_high,
    })
}

/// Writes `threshold,fpr,tpr` rows; the leading (0, 0) point has threshold `inf`.
pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("threshold,fpr,tpr\n");
    for p in points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let (points, auc) = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        let last = points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn three_of_four_pairs() {
        let (_, auc) = roc_curve(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn all_ties_give_half() {
        let (points, auc) = roc_curve(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(points.len(), 2);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[1, 1]), Err(Error::Roc(_))));
    }

    #[test]
    fn perfect_bootstrap_is_degenerate() {
        let scores: Vec<f64> = (0..20).map(f64::from).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let b = bootstrap_auc(&scores, &labels, 200, 3).unwrap();
        assert_eq!(b.se, 0.0);
        assert_eq!((b.ci_low, b.ci_high), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_needs_enough_resamples() {
        assert!(bootstrap_auc(&[0.1, 0.9], &[0, 1], 99, 0).is_err());
    }

    #[test]
    fn infinite_threshold_survives_json() {
        let (points, _) = roc_curve(&[0.9, 0.1], &[1, 0]).unwrap();
        let text = serde_json::to_string(&points).unwrap();
        let back: Vec<RocPoint> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, points);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert!((percentile(&v, 0.025) - 0.1).abs() < 1e-12);
    }
}
