use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GradeFilter, Task};
use super::report::{emit_report, summarize_reports, write_metrics_csv, ExperimentReport, SlidePrediction};
use super::split::{derive_survival_classes, eligible, stratified_split, Split, SplitAssignment, SurvivalClasses};
use super::{derive_seed, substream, with_workers};
use crate::aggregate::{majority_vote, median, median_risk};
use crate::dataio::{
    decode_image, extract_patches, load_manifest, slide_seed, tissue_mask, Codel, Idh, PatchSet, SlideRecord,
};
use crate::error::{Error, Result};
use crate::heads::{bce_loss, cox_loss, sigmoid, BinaryBatch, SurvivalBatch};
use crate::metrics::{c_index, roc_curve};
use crate::nncore::modelfile::{load_model, save_model};
use crate::nncore::{default_architecture, Mode, Network, Sgd, Tensor4};

/// Per-channel input standardization fitted on the training patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Standardizer {
    /// Mean and population std of each channel over every patch, with the
    /// std floored at 1e-6.
    pub fn fit(sets: &[&PatchSet]) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for ps in sets {
            let plane = ps.patch_size * ps.patch_size;
            for i in 0..ps.len() {
                let p = ps.patch(i);
                for c in 0..3 {
                    for &v in &p[c * plane..(c + 1) * plane] {
                        let v = f64::from(v);
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
                count += plane;
            }
        }
        if count == 0 {
            return Err(Error::InsufficientData("no training patches".into()));
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let std = std::array::from_fn(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-6));
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &mut Tensor4) {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        for i in 0..n {
            let s = x.sample_mut(i);
            for ch in 0..c.min(3) {
                let (m, sd) = (self.mean[ch], self.std[ch]);
                for v in &mut s[ch * plane..(ch + 1) * plane] {
                    *v = (*v - m) / sd;
                }
            }
        }
    }
}

/// Everything `evaluate` needs besides the weights; stored in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub task: Task,
    pub head: String,
    pub grade_filter: GradeFilter,
    pub repeat: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub patches_per_slide: usize,
    pub white_thresh: f64,
    pub var_thresh: f64,
    pub standardizer: Standardizer,
    pub cutoff_days: Option<f64>,
    pub risk_threshold: Option<f64>,
    pub selected_epoch: usize,
    pub val_metric: f64,
    pub bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// Mean patch loss on the validation slides; breaks ties in `val_metric`.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub network: Network,
    pub meta: ModelMeta,
    pub split: SplitAssignment,
    pub report: ExperimentReport,
}

struct ExtractParams<'a> {
    patches_per_slide: usize,
    patch_size: usize,
    seed: u64,
    white_thresh: f64,
    var_thresh: f64,
    cache_dir: Option<&'a Path>,
}

fn extract_one(r: &SlideRecord, manifest_dir: &Path, p: &ExtractParams) -> Result<PatchSet> {
    let seed = slide_seed(p.seed, &r.slide_id);
    let cache_file = p.cache_dir.map(|d| {
        let key = derive_seed(
            seed,
            &format!("{}/{}/{}/{}", p.patch_size, p.patches_per_slide, p.white_thresh, p.var_thresh),
        );
        d.join(format!("{}.{key:016x}.pfps", r.slide_id))
    });
    if let Some(f) = cache_file.as_ref().filter(|f| f.exists()) {
        return PatchSet::read_cache(&r.slide_id, f);
    }
    let img = decode_image(&r.resolve_image(manifest_dir))?;
    let mask = tissue_mask(&img, p.white_thresh, p.var_thresh);
    let ps = extract_patches(&r.slide_id, &img, &mask, p.patches_per_slide, p.patch_size, seed)?;
    if let Some(f) = cache_file {
        ps.write_cache(&f)?;
    }
    Ok(ps)
}

fn extract_all(records: &[&SlideRecord], manifest_dir: &Path, p: &ExtractParams) -> Result<Vec<PatchSet>> {
    if let Some(d) = p.cache_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    records.par_iter().map(|r| extract_one(r, manifest_dir, p)).collect()
}

/// Decodes, masks and cuts patches for every record, in record order.
pub fn load_patch_sets(records: &[&SlideRecord], manifest_dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<PatchSet>> {
    let p = ExtractParams {
        patches_per_slide: cfg.patches_per_slide,
        patch_size: cfg.patch_size,
        seed: cfg.seed,
        white_thresh: cfg.white_thresh,
        var_thresh: cfg.var_thresh,
        cache_dir: cfg.cache_dir.as_deref(),
    };
    with_workers(cfg.workers, || extract_all(records, manifest_dir, &p))?
}

/// Head output for every patch of every slide, eval mode. Each slide is one
/// batch, so results do not depend on the number of workers.
pub fn predict_slides(net: &Network, st: &Standardizer, sets: &[&PatchSet]) -> Result<Vec<Vec<f64>>> {
    sets.par_iter()
        .map(|ps| {
            let idx: Vec<usize> = (0..ps.len()).collect();
            let mut x = ps.to_tensor(&idx);
            st.apply(&mut x);
            Ok(net.forward(&x, Mode::Eval)?.head_values())
        })
        .collect()
}

/// Slide score and called label from patch outputs.
fn aggregate(head: &str, outputs: &[f64], risk_threshold: Option<f64>) -> Result<(f64, u8, Option<f64>)> {
    if head == "cox" {
        let risk = median_risk(outputs)?;
        let called = risk_threshold.map_or(0, |t| u8::from(risk >= t));
        Ok((risk, called, None))
    } else {
        let probs: Vec<f64> = outputs.iter().map(|&z| sigmoid(z)).collect();
        let v = majority_vote(&probs)?;
        Ok((v.positive_fraction, v.label, Some(v.mean_prob)))
    }
}

/// Binary truth for a slide: mutant, codeleted or short survivor is 1.
fn binary_label(task: Task, r: &SlideRecord, classes: Option<&SurvivalClasses>) -> Option<u8> {
    match task {
        Task::Idh => r.idh.map(|v| u8::from(v == Idh::Mutant)),
        Task::Codel => r.codel.map(|v| u8::from(v == Codel::Codeleted)),
        Task::SurvivalClass | Task::SurvivalCox => {
            let c = classes?;
            SurvivalClasses::label_of(c.cutoff_days, r.os_days?, r.event?)
        }
    }
}

struct Cohort<'a> {
    records: Vec<&'a SlideRecord>,
    sets: Vec<PatchSet>,
    index: HashMap<&'a str, usize>,
}

fn select_records(records: &[SlideRecord], task: Task, grade: GradeFilter) -> Vec<&SlideRecord> {
    records
        .iter()
        .filter(|r| grade.admits(r.grade) && eligible(task, r))
        .collect()
}

fn load_cohort<'a>(records: &'a [SlideRecord], manifest_dir: &Path, cfg: &ExperimentConfig) -> Result<Cohort<'a>> {
    let chosen = select_records(records, cfg.task, cfg.grade_filter);
    let sets = load_patch_sets(&chosen, manifest_dir, cfg)?;
    let index = chosen.iter().enumerate().map(|(i, r)| (r.slide_id.as_str(), i)).collect();
    Ok(Cohort {
        records: chosen,
        sets,
        index,
    })
}

fn check_no_leakage(split: &SplitAssignment, cohort: &Cohort) -> Result<()> {
    let patients_in = |s: Split| -> HashSet<&str> {
        split
            .ids(s)
            .iter()
            .map(|id| cohort.records[cohort.index[id]].patient_id.as_str())
            .collect()
    };
    let (train, val, test) = (patients_in(Split::Train), patients_in(Split::Val), patients_in(Split::Test));
    if !train.is_disjoint(&test) || !train.is_disjoint(&val) || !val.is_disjoint(&test) {
        return Err(Error::InsufficientData("a patient appears in more than one split".into()));
    }
    Ok(())
}

/// Validation metric (slide AUC for classification heads, c-index for Cox)
/// and the mean patch-level loss on the validation slides, which breaks
/// ties in the metric. The loss is +inf when undefined (no Cox event).
fn validation_metric(
    task: Task,
    net: &Network,
    st: &Standardizer,
    cohort: &Cohort,
    val: &[usize],
    classes: Option<&SurvivalClasses>,
) -> Result<(f64, f64)> {
    let sets: Vec<&PatchSet> = val.iter().map(|&i| &cohort.sets[i]).collect();
    let outputs = predict_slides(net, st, &sets)?;
    if task == Task::SurvivalCox {
        let risks: Vec<f64> = outputs.iter().map(|o| median_risk(o)).collect::<Result<_>>()?;
        let times: Vec<f64> = val.iter().map(|&i| cohort.records[i].os_days.unwrap_or(0.0)).collect();
        let events: Vec<u8> = val.iter().map(|&i| cohort.records[i].event.unwrap_or(0)).collect();
        let c = c_index(&risks, &times, &events)?;
        let (mut pr, mut pt, mut pe) = (Vec::new(), Vec::new(), Vec::new());
        for (k, o) in outputs.iter().enumerate() {
            pr.extend_from_slice(o);
            pt.extend(std::iter::repeat_n(times[k], o.len()));
            pe.extend(std::iter::repeat_n(events[k], o.len()));
        }
        let loss = cox_loss(&SurvivalBatch {
            risks: &pr,
            times: &pt,
            events: &pe,
        })
        .map_or(f64::INFINITY, |(l, _)| l);
        return Ok((c, loss));
    }
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut logits, mut patch_labels) = (Vec::new(), Vec::new());
    for (k, &i) in val.iter().enumerate() {
        if let Some(l) = binary_label(task, cohort.records[i], classes) {
            scores.push(aggregate("bce", &outputs[k], None)?.0);
            labels.push(l);
            logits.extend_from_slice(&outputs[k]);
            patch_labels.extend(std::iter::repeat_n(l, outputs[k].len()));
        }
    }
    let (_, auc) = roc_curve(&scores, &labels)?;
    let (loss, _) = bce_loss(&BinaryBatch {
        logits: &logits,
        labels: &patch_labels,
    })?;
    Ok((auc, loss))
}

#[allow(clippy::too_many_arguments)]
fn predictions_for(
    task: Task,
    net: &Network,
    st: &Standardizer,
    cohort: &Cohort,
    slides: &[usize],
    classes: Option<&SurvivalClasses>,
    risk_threshold: Option<f64>,
    keep_unlabeled: bool,
) -> Result<Vec<SlidePrediction>> {
    let sets: Vec<&PatchSet> = slides.iter().map(|&i| &cohort.sets[i]).collect();
    let outputs = predict_slides(net, st, &sets)?;
    let mut out = Vec::with_capacity(slides.len());
    for (k, &i) in slides.iter().enumerate() {
        let r = cohort.records[i];
        let label = binary_label(task, r, classes);
        if label.is_none() && !keep_unlabeled {
            continue;
        }
        let (score, predicted, mean_prob) = aggregate(task.head(), &outputs[k], risk_threshold)?;
        out.push(SlidePrediction {
            slide_id: r.slide_id.clone(),
            patient_id: r.patient_id.clone(),
            grade: r.grade,
            score,
            predicted,
            label,
            os_days: r.os_days,
            event: r.event,
            mean_prob,
        });
    }
    Ok(out)
}

fn train_repeat(cfg: &ExperimentConfig, all: &[SlideRecord], cohort: &Cohort, repeat: usize) -> Result<RepeatResult> {
    let split = stratified_split(all, cfg, repeat)?;
    check_no_leakage(&split, cohort)?;
    let in_split = |s: Split| -> Vec<usize> {
        let mut v: Vec<usize> = split.ids(s).iter().map(|id| cohort.index[id]).collect();
        v.sort_unstable();
        v
    };
    let (train, val, test) = (in_split(Split::Train), in_split(Split::Val), in_split(Split::Test));

    let classes = if cfg.task.is_survival() {
        let train_ids: HashSet<&str> = train.iter().map(|&i| cohort.records[i].slide_id.as_str()).collect();
        Some(derive_survival_classes(&cohort.records, &train_ids)?)
    } else {
        None
    };
    let classes = classes.as_ref();
    let cox = cfg.task == Task::SurvivalCox;

    // training slides that can contribute to the loss
    let train_slides: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| cox || binary_label(cfg.task, cohort.records[i], classes).is_some())
        .collect();
    let train_sets: Vec<&PatchSet> = train_slides.iter().map(|&i| &cohort.sets[i]).collect();
    let st = Standardizer::fit(&train_sets)?;
    let mut items: Vec<(usize, usize)> = train_slides
        .iter()
        .flat_map(|&i| (0..cohort.sets[i].len()).map(move |p| (i, p)))
        .collect();
    if items.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} training patches, fewer than one batch of {}",
            items.len(),
            cfg.batch_size
        )));
    }

    let p = cfg.patch_size;
    let specs = default_architecture(3, cfg.widths);
    let mut net = Network::init(specs, [3, p, p], &mut substream(cfg.seed, &format!("init/{repeat}")))?;
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut best: Option<(usize, f64, f64, Network)> = None;
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        items.sort_unstable();
        items.shuffle(&mut substream(cfg.seed, &format!("shuffle/{repeat}/{epoch}")));
        let (mut loss_sum, mut batches) = (0.0, 0);
        for (b, chunk) in items.chunks_exact(cfg.batch_size).enumerate() {
            let fail = |message: String| Error::Training {
                epoch,
                batch: b,
                message,
            };
            let mut x = Tensor4::stack(
                &chunk
                    .iter()
                    .map(|&(i, k)| cohort.sets[i].to_tensor(&[k]))
                    .collect::<Vec<_>>(),
            )?;
            st.apply(&mut x);
            let pass = net.forward(&x, Mode::Train).map_err(|e| fail(e.to_string()))?;
            let out = pass.head_values();
            let (loss, grad) = if cox {
                let times: Vec<f64> = chunk.iter().map(|&(i, _)| cohort.records[i].os_days.unwrap_or(0.0)).collect();
                let events: Vec<u8> = chunk.iter().map(|&(i, _)| cohort.records[i].event.unwrap_or(0)).collect();
                if !events.contains(&1) {
                    continue;
                }
                cox_loss(&SurvivalBatch {
                    risks: &out,
                    times: &times,
                    events: &events,
                })
            } else {
                let labels: Vec<u8> = chunk
                    .iter()
                    .map(|&(i, _)| binary_label(cfg.task, cohort.records[i], classes).expect("labeled"))
                    .collect();
                bce_loss(&BinaryBatch {
                    logits: &out,
                    labels: &labels,
                })
            }
            .map_err(|e| fail(e.to_string()))?;
            if !loss.is_finite() {
                return Err(fail(format!("loss is {loss}")));
            }
            let dout = Tensor4::from_vec([chunk.len(), 1, 1, 1], grad)?;
            let grads = net.backward(&pass, &dout).map_err(|e| fail(e.to_string()))?;
            sgd.step(&mut net.params, &grads).map_err(|e| fail(e.to_string()))?;
            net.update_running_stats(&pass);
            loss_sum += loss;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: "no usable batch (every batch lacked an observed event)".into(),
            });
        }
        let (metric, val_loss) = validation_metric(cfg.task, &net, &st, cohort, &val, classes)?;
        history.push(EpochLog {
            epoch,
            batches,
            train_loss: loss_sum / batches as f64,
            val_metric: metric,
            val_loss,
        });
        log::info!(
            "{} repeat {repeat} epoch {epoch}: loss {:.4} over {batches} batches, val {metric:.4} (loss {val_loss:.4})",
            cfg.task,
            loss_sum / batches as f64
        );
        let improved = best
            .as_ref()
            .is_none_or(|b| metric > b.1 || (metric == b.1 && val_loss < b.2));
        if improved {
            best = Some((epoch, metric, val_loss, net.clone()));
        }
        let best_epoch = best.as_ref().expect("set above").0;
        if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (selected_epoch, val_metric, _, net) = best.expect("at least one epoch ran");

    let risk_threshold = if cox {
        let sets: Vec<&PatchSet> = train.iter().map(|&i| &cohort.sets[i]).collect();
        let risks: Vec<f64> = predict_slides(&net, &st, &sets)?
            .iter()
            .map(|o| median_risk(o))
            .collect::<Result<_>>()?;
        Some(median(&risks))
    } else {
        None
    };

    let predictions = predictions_for(cfg.task, &net, &st, cohort, &test, classes, risk_threshold, cfg.task.is_survival())?;
    let bootstrap_seed = derive_seed(cfg.seed, &format!("bootstrap/{repeat}"));
    let mut report = ExperimentReport::build(
        cfg.task,
        cfg.grade_filter,
        repeat,
        cfg.bootstrap,
        bootstrap_seed,
        predictions,
        [train.len(), val.len(), test.len()],
    );
    report.cutoff_days = classes.map(|c| c.cutoff_days);
    report.risk_threshold = risk_threshold;
    report.selected_epoch = Some(selected_epoch);
    report.val_metric = Some(val_metric);
    report.history = history;

    let meta = ModelMeta {
        task: cfg.task,
        head: cfg.task.head().to_string(),
        grade_filter: cfg.grade_filter,
        repeat,
        seed: cfg.seed,
        patch_size: cfg.patch_size,
        patches_per_slide: cfg.patches_per_slide,
        white_thresh: cfg.white_thresh,
        var_thresh: cfg.var_thresh,
        standardizer: st,
        cutoff_days: report.cutoff_days,
        risk_threshold,
        selected_epoch,
        val_metric,
        bootstrap: cfg.bootstrap,
    };
    Ok(RepeatResult {
        repeat,
        network: net,
        meta,
        split,
        report,
    })
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Trains one model per configured repeat and evaluates it once on that
/// repeat's test slides. Patches are cut once and shared by all repeats.
pub fn train_task(cfg: &ExperimentConfig, manifest: &Path) -> Result<Vec<RepeatResult>> {
    cfg.validate()?;
    let records = load_manifest(manifest)?;
    let cohort = load_cohort(&records, &manifest_dir(manifest), cfg)?;
    cfg.repeat_indices()
        .into_iter()
        .map(|r| with_workers(cfg.workers, || train_repeat(cfg, &records, &cohort, r))?)
        .collect()
}

/// `train_task`, then writes per repeat the model (`.model.pfnn`), the split
/// (`.split.csv`) and the report files, plus `<task>_<grade>_mean.metrics.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, manifest: &Path, out_dir: &Path) -> Result<Vec<RepeatResult>> {
    let results = train_task(cfg, manifest)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = load_manifest(manifest)?;
    for r in &results {
        let stem = r.report.stem();
        save_model(
            &out_dir.join(format!("{stem}.model.pfnn")),
            &r.network,
            &serde_json::to_value(&r.meta)?,
        )?;
        r.split.write_csv(&out_dir.join(format!("{stem}.split.csv")), &records)?;
        emit_report(&r.report, out_dir, "")?;
    }
    let reports: Vec<ExperimentReport> = results.iter().map(|r| r.report.clone()).collect();
    let (_, means) = summarize_reports(&reports);
    write_metrics_csv(&out_dir.join(format!("{}.metrics.csv", cfg.stem("mean"))), &means)?;
    Ok(results)
}

/// Applies a saved model to every eligible slide of a manifest, optionally
/// restricted to one grade. Parameters and running statistics are never
/// modified.
pub fn evaluate(
    model: &Path,
    manifest: &Path,
    task: Task,
    grade_filter: GradeFilter,
    workers: usize,
) -> Result<ExperimentReport> {
    let (net, meta) = load_model(model)?;
    let meta: ModelMeta =
        serde_json::from_value(meta).map_err(|e| Error::ModelFormat(format!("model metadata: {e}")))?;
    if meta.head != task.head() {
        return Err(Error::Compatibility(format!(
            "model has a {} head, task {task} needs {}",
            meta.head,
            task.head()
        )));
    }
    if task.is_survival() != meta.task.is_survival() || (task == Task::SurvivalClass && meta.cutoff_days.is_none()) {
        return Err(Error::Compatibility(format!("model trained for {}, not {task}", meta.task)));
    }
    let cfg = ExperimentConfig {
        task,
        grade_filter,
        patches_per_slide: meta.patches_per_slide,
        patch_size: meta.patch_size,
        seed: meta.seed,
        white_thresh: meta.white_thresh,
        var_thresh: meta.var_thresh,
        workers,
        bootstrap: meta.bootstrap,
        ..ExperimentConfig::default()
    };
    if net.input != [3, meta.patch_size, meta.patch_size] {
        return Err(Error::Compatibility("model input does not match its patch size".into()));
    }
    let records = load_manifest(manifest)?;
    let cohort = load_cohort(&records, &manifest_dir(manifest), &cfg)?;
    let classes = meta.cutoff_days.map(|c| SurvivalClasses::from_cutoff(c, &cohort.records));
    let all: Vec<usize> = (0..cohort.records.len()).collect();
    let predictions = with_workers(workers, || {
        predictions_for(task, &net, &meta.standardizer, &cohort, &all, classes.as_ref(), meta.risk_threshold, task.is_survival())
    })??;
    let n = predictions.len();
    let mut report = ExperimentReport::build(
        task,
        grade_filter,
        meta.repeat,
        meta.bootstrap,
        derive_seed(meta.seed, &format!("bootstrap/{}", meta.repeat)),
        predictions,
        [0, 0, n],
    );
    report.cutoff_days = meta.cutoff_days;
    report.risk_threshold = meta.risk_threshold;
    report.selected_epoch = Some(meta.selected_epoch);
    report.val_metric = Some(meta.val_metric);
    Ok(report)
}
