use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use super::substream;
use crate::aggregate::median;
use crate::dataio::{Codel, Idh, SlideRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub repeat: usize,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, slide_id: &str) -> Option<Split> {
        self.assignment.get(slide_id).copied()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn write_csv(&self, path: &Path, records: &[SlideRecord]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["slide_id", "patient_id", "split"])?;
        for r in records {
            if let Some(s) = self.get(&r.slide_id) {
                w.write_record([r.slide_id.as_str(), r.patient_id.as_str(), s.name()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Whether a record carries what `task` needs.
pub fn eligible(task: Task, r: &SlideRecord) -> bool {
    match task {
        Task::Idh => r.idh.is_some(),
        Task::Codel => r.idh == Some(Idh::Mutant) && r.codel.is_some(),
        Task::SurvivalClass | Task::SurvivalCox => r.os_days.is_some() && r.event.is_some(),
    }
}

/// Stratification label per eligible record, in input order.
///
/// IDH and 1p/19q use the class itself. The short/long classes depend on a
/// cutoff that is only known after splitting, so `survival_class` stratifies
/// on a provisional label (OS below the cohort median) and `survival_cox`
/// on the event indicator.
pub fn stratum_labels(task: Task, records: &[&SlideRecord]) -> Vec<u8> {
    match task {
        Task::Idh => records.iter().map(|r| u8::from(r.idh == Some(Idh::Mutant))).collect(),
        Task::Codel => records.iter().map(|r| u8::from(r.codel == Some(Codel::Codeleted))).collect(),
        Task::SurvivalClass => {
            let os: Vec<f64> = records.iter().map(|r| r.os_days.unwrap_or(0.0)).collect();
            let m = if os.is_empty() { 0.0 } else { median(&os) };
            os.iter().map(|&v| u8::from(v < m)).collect()
        }
        Task::SurvivalCox => records.iter().map(|r| r.event.unwrap_or(0)).collect(),
    }
}

/// Splits the eligible slides of `records` (after the grade filter) into
/// train/val/test, stratified by class and grouped by patient.
///
/// Within each class the patients are shuffled once per seed. Repeat `r`
/// takes as test set the window `[⌊r·t·n⌋, ⌊(r+1)·t·n⌋)` of that order
/// (t = test ratio), so the first `1/t` repeats have disjoint test sets.
/// The validation window follows it and the rest is training. Every split
/// is within one patient of its ratio for each class.
pub fn stratified_split(records: &[SlideRecord], cfg: &ExperimentConfig, repeat: usize) -> Result<SplitAssignment> {
    cfg.validate()?;
    let chosen: Vec<&SlideRecord> = records
        .iter()
        .filter(|r| cfg.grade_filter.admits(r.grade) && eligible(cfg.task, r))
        .collect();
    let strata = stratum_labels(cfg.task, &chosen);

    // patient → stratum of its first slide; patients kept in first-seen order
    let mut patients: Vec<(&str, u8)> = Vec::new();
    let mut seen = HashSet::new();
    for (r, &s) in chosen.iter().zip(&strata) {
        if seen.insert(r.patient_id.as_str()) {
            patients.push((r.patient_id.as_str(), s));
        }
    }

    let (tr, va, te) = cfg.ratios;
    let mut rng = substream(cfg.seed, "split");
    let mut patient_split: HashMap<&str, Split> = HashMap::new();
    for class in [0u8, 1] {
        let mut units: Vec<&str> = patients.iter().filter(|p| p.1 == class).map(|p| p.0).collect();
        let slides = strata.iter().filter(|&&s| s == class).count();
        // Cox strata are censoring groups, not classes; a small one is fine
        if cfg.task == Task::SurvivalCox && slides < 4 {
            if units.is_empty() {
                continue;
            }
        } else if slides < 4 {
            return Err(Error::InsufficientData(format!(
                "class {class} of task {} has {slides} slides, at least 4 needed",
                cfg.task
            )));
        }
        units.sort_unstable();
        units.shuffle(&mut rng);
        let n = units.len();
        let nf = n as f64;
        let start = (repeat as f64 * te * nf).floor() as usize;
        let end = ((repeat + 1) as f64 * te * nf).floor() as usize;
        // class strata keep at least one patient in every split; censoring
        // strata may be tiny and use the plain windows
        let strict = cfg.task != Task::SurvivalCox;
        let t = if strict {
            (end - start).clamp(1, n.saturating_sub(2).max(1))
        } else {
            (end - start).min(n)
        };
        let d = t as f64 - te * nf;
        // split the rounding slack between val and train so both stay within one
        let v = (va * nf - d * va / (va + tr)).round().max(0.0) as usize;
        let v = if strict {
            v.clamp(1, n.saturating_sub(t + 1).max(1))
        } else {
            v.min(n - t)
        };
        for (k, &u) in units.iter().enumerate() {
            let pos = (k + n - start % n) % n;
            let split = if pos < t {
                Split::Test
            } else if pos < t + v {
                Split::Val
            } else {
                Split::Train
            };
            patient_split.insert(u, split);
        }
    }

    let assignment: BTreeMap<String, Split> = chosen
        .iter()
        .map(|r| (r.slide_id.clone(), patient_split[r.patient_id.as_str()]))
        .collect();
    for s in [Split::Train, Split::Val, Split::Test] {
        if !assignment.values().any(|&v| v == s) {
            return Err(Error::InsufficientData(format!("{} split is empty", s.name())));
        }
    }
    Ok(SplitAssignment {
        seed: cfg.seed,
        repeat,
        assignment,
    })
}

/// Short/long survival labels (short = 1) from a training-split cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalClasses {
    pub cutoff_days: f64,
    pub labels: BTreeMap<String, u8>,
    /// Censored before the cutoff, so the class cannot be known.
    pub excluded: Vec<String>,
}

impl SurvivalClasses {
    pub fn label_of(cutoff: f64, os_days: f64, event: u8) -> Option<u8> {
        if os_days >= cutoff {
            Some(0)
        } else if event == 1 {
            Some(1)
        } else {
            None
        }
    }

    pub fn from_cutoff(cutoff_days: f64, records: &[&SlideRecord]) -> Self {
        let mut labels = BTreeMap::new();
        let mut excluded = Vec::new();
        for r in records {
            if let (Some(os), Some(ev)) = (r.os_days, r.event) {
                match Self::label_of(cutoff_days, os, ev) {
                    Some(l) => {
                        labels.insert(r.slide_id.clone(), l);
                    }
                    None => excluded.push(r.slide_id.clone()),
                }
            }
        }
        Self {
            cutoff_days,
            labels,
            excluded,
        }
    }
}

/// Cutoff = median OS over training slides with an observed death; short
/// means OS below the cutoff with the death observed, long means OS at or
/// above it. Subjects censored before the cutoff are excluded.
pub fn derive_survival_classes(records: &[&SlideRecord], train_ids: &HashSet<&str>) -> Result<SurvivalClasses> {
    let train_os: Vec<f64> = records
        .iter()
        .filter(|r| train_ids.contains(r.slide_id.as_str()) && r.event == Some(1))
        .filter_map(|r| r.os_days)
        .collect();
    if train_os.is_empty() {
        return Err(Error::Cutoff("training split has no observed deaths".into()));
    }
    Ok(SurvivalClasses::from_cutoff(median(&train_os), records))
}
