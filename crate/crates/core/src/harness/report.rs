use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{GradeFilter, Task};
use super::train::EpochLog;
use crate::dataio::Grade;
use crate::error::{Error, Result};
use crate::metrics::{c_index, correlations, roc_auc, write_roc_csv, Confusion, Correlations, RocSummary};

/// One slide's aggregated prediction. `score` is the positive vote share
/// for classification heads and the median patch risk for the Cox head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub patient_id: String,
    pub grade: Grade,
    pub score: f64,
    pub predicted: u8,
    /// Truth for the binary metrics; `None` when unknowable (censored short/long).
    pub label: Option<u8>,
    pub os_days: Option<f64>,
    pub event: Option<u8>,
    pub mean_prob: Option<f64>,
}

/// Evaluation of one model on one set of slides. Rates are percentages;
/// a metric that is undefined on the slides (e.g. a single class) is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub grade_filter: GradeFilter,
    pub repeat: usize,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub confusion: Option<Confusion>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub roc: Option<RocSummary>,
    pub c_index: Option<f64>,
    pub correlations: Option<Correlations>,
    pub cutoff_days: Option<f64>,
    pub risk_threshold: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub val_metric: Option<f64>,
    pub history: Vec<EpochLog>,
    /// Slides in (train, val, test); for a standalone evaluation only the
    /// last entry is nonzero.
    pub split_sizes: [usize; 3],
    pub predictions: Vec<SlidePrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Metrics {
    pub confusion: Option<Confusion>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub roc: Option<RocSummary>,
    pub c_index: Option<f64>,
    pub correlations: Option<Correlations>,
}

/// Every summary metric from a prediction table. Survival tasks add the
/// c-index of the score against (os_days, event) and the correlations of
/// the score with −os_days.
pub(crate) fn compute_metrics(task: Task, preds: &[SlidePrediction], bootstrap: usize, seed: u64) -> Metrics {
    let labeled: Vec<&SlidePrediction> = preds.iter().filter(|p| p.label.is_some()).collect();
    let truth: Vec<u8> = labeled.iter().map(|p| p.label.expect("filtered")).collect();
    let called: Vec<u8> = labeled.iter().map(|p| p.predicted).collect();
    let scores: Vec<f64> = labeled.iter().map(|p| p.score).collect();
    let confusion = Confusion::count(&called, &truth).ok().filter(|c| c.total() > 0);
    let stats = confusion.and_then(|c| c.stats().ok());
    let roc = roc_auc(&scores, &truth, bootstrap, seed).ok();

    let (mut c, mut corr) = (None, None);
    if task.is_survival() {
        let timed: Vec<&SlidePrediction> = preds.iter().filter(|p| p.os_days.is_some() && p.event.is_some()).collect();
        let risk: Vec<f64> = timed.iter().map(|p| p.score).collect();
        let times: Vec<f64> = timed.iter().map(|p| p.os_days.expect("filtered")).collect();
        let events: Vec<u8> = timed.iter().map(|p| p.event.expect("filtered")).collect();
        c = c_index(&risk, &times, &events).ok();
        let neg_os: Vec<f64> = times.iter().map(|t| -t).collect();
        corr = correlations(&risk, &neg_os).ok();
    }
    Metrics {
        confusion,
        accuracy: stats.map(|s| 100.0 * s.accuracy),
        sensitivity: stats.map(|s| 100.0 * s.sensitivity),
        specificity: stats.map(|s| 100.0 * s.specificity),
        roc,
        c_index: c,
        correlations: corr,
    }
}

impl ExperimentReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        task: Task,
        grade_filter: GradeFilter,
        repeat: usize,
        bootstrap: usize,
        bootstrap_seed: u64,
        predictions: Vec<SlidePrediction>,
        split_sizes: [usize; 3],
    ) -> Self {
        let m = compute_metrics(task, &predictions, bootstrap, bootstrap_seed);
        Self {
            task,
            grade_filter,
            repeat,
            bootstrap,
            bootstrap_seed,
            confusion: m.confusion,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            roc: m.roc,
            c_index: m.c_index,
            correlations: m.correlations,
            cutoff_days: None,
            risk_threshold: None,
            selected_epoch: None,
            val_metric: None,
            history: Vec::new(),
            split_sizes,
            predictions,
        }
    }

    /// Recomputes the summary row from the embedded prediction table.
    pub fn recompute(&self) -> MetricsRow {
        let m = compute_metrics(self.task, &self.predictions, self.bootstrap, self.bootstrap_seed);
        let mut r = self.clone();
        r.accuracy = m.accuracy;
        r.sensitivity = m.sensitivity;
        r.specificity = m.specificity;
        r.roc = m.roc;
        r.c_index = m.c_index;
        r.correlations = m.correlations;
        MetricsRow::from_report(&r)
    }

    /// Restricts to one grade and recomputes the metrics; training-time
    /// fields (cutoff, threshold, history) are kept.
    pub fn for_grade(&self, grade: Grade) -> Self {
        let preds: Vec<SlidePrediction> = self.predictions.iter().filter(|p| p.grade == grade).cloned().collect();
        let mut r = Self::build(
            self.task,
            GradeFilter::Only(grade),
            self.repeat,
            self.bootstrap,
            self.bootstrap_seed,
            preds,
            self.split_sizes,
        );
        r.cutoff_days = self.cutoff_days;
        r.risk_threshold = self.risk_threshold;
        r.selected_epoch = self.selected_epoch;
        r.val_metric = self.val_metric;
        r.history = self.history.clone();
        r
    }

    pub fn stem(&self) -> String {
        format!("{}_{}_{}", self.task, self.grade_filter, self.repeat)
    }
}

pub const METRICS_HEADER: &str =
    "task,grade,accuracy,sensitivity,specificity,auc,auc_se,ci_low,ci_high,c_index,pearson,spearman";

/// One row of the summary table; `None` is written as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    pub grade: String,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub auc_se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub c_index: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl MetricsRow {
    pub fn from_report(r: &ExperimentReport) -> Self {
        Self {
            task: r.task.to_string(),
            grade: r.grade_filter.to_string(),
            accuracy: r.accuracy,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
            auc: r.roc.as_ref().map(|x| x.auc),
            auc_se: r.roc.as_ref().map(|x| x.se),
            ci_low: r.roc.as_ref().map(|x| x.ci_low),
            ci_high: r.roc.as_ref().map(|x| x.ci_high),
            c_index: r.c_index,
            pearson: r.correlations.map(|c| c.pearson),
            spearman: r.correlations.map(|c| c.spearman),
        }
    }

    fn values(&self) -> [Option<f64>; 10] {
        [
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.auc,
            self.auc_se,
            self.ci_low,
            self.ci_high,
            self.c_index,
            self.pearson,
            self.spearman,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let mut parts = vec![self.task.clone(), self.grade.clone()];
        parts.extend(self.values().iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string())));
        parts.join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return Err(Error::Manifest {
                row: 0,
                message: format!("metrics row needs 12 fields, got {}", f.len()),
            });
        }
        let num = |i: usize| -> Result<Option<f64>> {
            match f[i] {
                "NA" => Ok(None),
                s => s.parse().map(Some).map_err(|_| Error::Parse {
                    row: 0,
                    field: METRICS_HEADER.split(',').nth(i).unwrap_or("?").to_string(),
                    message: format!("not a number: `{s}`"),
                }),
            }
        };
        Ok(Self {
            task: f[0].to_string(),
            grade: f[1].to_string(),
            accuracy: num(2)?,
            sensitivity: num(3)?,
            specificity: num(4)?,
            auc: num(5)?,
            auc_se: num(6)?,
            ci_low: num(7)?,
            ci_high: num(8)?,
            c_index: num(9)?,
            pearson: num(10)?,
            spearman: num(11)?,
        })
    }

    /// Field-wise mean; `None` if any row lacks the field.
    pub fn mean(rows: &[MetricsRow]) -> Option<MetricsRow> {
        let first = rows.first()?;
        let avg = |get: fn(&MetricsRow) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = rows.iter().map(get).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(MetricsRow {
            task: first.task.clone(),
            grade: first.grade.clone(),
            accuracy: avg(|r| r.accuracy),
            sensitivity: avg(|r| r.sensitivity),
            specificity: avg(|r| r.specificity),
            auc: avg(|r| r.auc),
            auc_se: avg(|r| r.auc_se),
            ci_low: avg(|r| r.ci_low),
            ci_high: avg(|r| r.ci_high),
            c_index: avg(|r| r.c_index),
            pearson: avg(|r| r.pearson),
            spearman: avg(|r| r.spearman),
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = format!("{METRICS_HEADER}\n");
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::Manifest {
            row: 1,
            message: format!("metrics header must be `{METRICS_HEADER}`"),
        });
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::from_csv_line).collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn write_text(path: PathBuf, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `<stem>.<prefix>report.json`, `.metrics.csv`, `.predictions.csv`,
/// `.roc.csv` when the ROC is defined and, for survival tasks, the
/// `.scatter.csv` (`slide_id,predicted,true`, true = OS days) and
/// `.risk_by_grade.csv` files. `prefix` separates evaluation runs
/// (`"eval_"`) from training runs (`""`).
pub fn emit_report(report: &ExperimentReport, out_dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = report.stem();
    let file = |kind: &str, ext: &str| out_dir.join(format!("{stem}.{prefix}{kind}.{ext}"));
    let mut written = Vec::new();

    write_text(file("report", "json"), serde_json::to_string_pretty(report)?, &mut written)?;
    let metrics = file("metrics", "csv");
    write_metrics_csv(&metrics, &[MetricsRow::from_report(report)])?;
    written.push(metrics);

    let mut preds = String::from("slide_id,patient_id,grade,label,score,predicted,os_days,event\n");
    for p in &report.predictions {
        preds.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.slide_id,
            p.patient_id,
            p.grade,
            opt(p.label),
            p.score,
            p.predicted,
            opt(p.os_days),
            opt(p.event)
        ));
    }
    write_text(file("predictions", "csv"), preds, &mut written)?;

    if let Some(roc) = &report.roc {
        let path = file("roc", "csv");
        write_roc_csv(&path, &roc.points)?;
        written.push(path);
    }

    if report.task.is_survival() {
        let mut scatter = String::from("slide_id,predicted,true\n");
        let mut by_grade = String::from("slide_id,grade,risk\n");
        for p in &report.predictions {
            if let Some(os) = p.os_days {
                scatter.push_str(&format!("{},{},{}\n", p.slide_id, p.score, os));
            }
            by_grade.push_str(&format!("{},{},{}\n", p.slide_id, p.grade, p.score));
        }
        write_text(file("scatter", "csv"), scatter, &mut written)?;
        write_text(file("risk_by_grade", "csv"), by_grade, &mut written)?;
    }
    Ok(written)
}

/// Per-repeat rows followed by one mean row per (task, grade), in first-seen
/// order of the groups.
pub fn summarize_reports(reports: &[ExperimentReport]) -> (Vec<MetricsRow>, Vec<MetricsRow>) {
    let rows: Vec<MetricsRow> = reports.iter().map(MetricsRow::from_report).collect();
    let mut groups: BTreeMap<(String, String), (usize, Vec<MetricsRow>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups
            .entry((r.task.clone(), r.grade.clone()))
            .or_insert_with(|| (i, Vec::new()))
            .1
            .push(r.clone());
    }
    let mut means: Vec<(usize, MetricsRow)> = groups
        .into_values()
        .filter_map(|(first, g)| MetricsRow::mean(&g).map(|m| (first, m)))
        .collect();
    means.sort_by_key(|(first, _)| *first);
    (rows, means.into_iter().map(|(_, m)| m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: usize, score: f64, label: u8, grade: Grade) -> SlidePrediction {
        SlidePrediction {
            slide_id: format!("s{id}"),
            patient_id: format!("p{id}"),
            grade,
            score,
            predicted: u8::from(score > 0.5),
            label: Some(label),
            os_days: Some(100.0 + id as f64 * 10.0),
            event: Some(1),
            mean_prob: None,
        }
    }

    fn sample(task: Task) -> ExperimentReport {
        let preds = vec![
            pred(0, 0.9, 1, Grade::II),
            pred(1, 0.7, 0, Grade::III),
            pred(2, 0.2, 0, Grade::II),
            pred(3, 0.6, 1, Grade::III),
            pred(4, 0.1, 0, Grade::IV),
            pred(5, 0.8, 1, Grade::IV),
        ];
        ExperimentReport::build(task, GradeFilter::All, 0, 200, 7, preds, [0, 0, 6])
    }

    #[test]
    fn classification_row_has_na_survival_fields() {
        let line = MetricsRow::from_report(&sample(Task::Idh)).to_csv_line();
        assert!(line.starts_with("idh,all,"));
        assert!(line.ends_with(",NA,NA,NA"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let row = MetricsRow::from_report(&sample(Task::SurvivalClass));
        assert!(row.c_index.is_some());
        assert_eq!(MetricsRow::from_csv_line(&row.to_csv_line()).unwrap(), row);
    }

    #[test]
    fn recompute_matches() {
        let r = sample(Task::Idh);
        assert_eq!(r.recompute(), MetricsRow::from_report(&r));
    }

    #[test]
    fn grade_confusions_sum_to_total() {
        let r = sample(Task::Idh);
        let sum = [Grade::II, Grade::III, Grade::IV]
            .iter()
            .filter_map(|&g| r.for_grade(g).confusion)
            .fold(Confusion::default(), |a, b| a + b);
        assert_eq!(Some(sum), r.confusion);
    }

    #[test]
    fn mean_row_is_fieldwise() {
        let a = MetricsRow::from_report(&sample(Task::Idh));
        let mut b = a.clone();
        b.accuracy = a.accuracy.map(|v| v + 10.0);
        let m = MetricsRow::mean(&[a.clone(), b]).unwrap();
        assert_eq!(m.accuracy, a.accuracy.map(|v| v + 5.0));
        assert_eq!(m.c_index, None);
    }
}
