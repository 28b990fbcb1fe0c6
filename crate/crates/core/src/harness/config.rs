use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{Grade, VAR_THRESH, WHITE_THRESH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Idh,
    Codel,
    SurvivalClass,
    SurvivalCox,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Idh => "idh",
            Task::Codel => "codel",
            Task::SurvivalClass => "survival_class",
            Task::SurvivalCox => "survival_cox",
        }
    }

    pub fn is_survival(self) -> bool {
        matches!(self, Task::SurvivalClass | Task::SurvivalCox)
    }

    /// Head trained for this task: `"cox"` or `"bce"`.
    pub fn head(self) -> &'static str {
        if self == Task::SurvivalCox {
            "cox"
        } else {
            "bce"
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idh" => Ok(Task::Idh),
            "codel" => Ok(Task::Codel),
            "survival_class" => Ok(Task::SurvivalClass),
            "survival_cox" => Ok(Task::SurvivalCox),
            _ => Err(Error::Config(format!(
                "unknown task `{s}` (expected idh, codel, survival_class, survival_cox)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum GradeFilter {
    All,
    Only(Grade),
}

impl GradeFilter {
    pub fn admits(self, grade: Grade) -> bool {
        match self {
            GradeFilter::All => true,
            GradeFilter::Only(g) => g == grade,
        }
    }
}

impl fmt::Display for GradeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradeFilter::All => f.write_str("all"),
            GradeFilter::Only(g) => write!(f, "{g}"),
        }
    }
}

impl From<GradeFilter> for String {
    fn from(g: GradeFilter) -> String {
        g.to_string()
    }
}

impl TryFrom<String> for GradeFilter {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for GradeFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(GradeFilter::All);
        }
        s.parse::<Grade>()
            .map(GradeFilter::Only)
            .map_err(|m| Error::Config(format!("grade filter: {m} or all")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub grade_filter: GradeFilter,
    /// (train, val, test) fractions.
    pub ratios: (f64, f64, f64),
    pub repeats: usize,
    /// Run just this repeat index instead of all of them.
    pub only_repeat: Option<usize>,
    pub patches_per_slide: usize,
    pub patch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation metric;
    /// 0 disables early stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub widths: [usize; 3],
    pub white_thresh: f64,
    pub var_thresh: f64,
    /// Worker threads for extraction and inference; 0 uses every core.
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Idh,
            grade_filter: GradeFilter::All,
            ratios: (0.5, 0.25, 0.25),
            repeats: 4,
            only_repeat: None,
            patches_per_slide: 100,
            patch_size: 64,
            epochs: 30,
            patience: 5,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            bootstrap: 1000,
            widths: [16, 32, 64],
            white_thresh: WHITE_THRESH,
            var_thresh: VAR_THRESH,
            workers: 0,
            cache_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Sets one field from its textual form. Keys match the config file and
    /// the long CLI flags with `-` read as `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "task" => self.task = value.parse()?,
            "grade" | "grade_filter" => self.grade_filter = value.parse()?,
            "ratios" => {
                let r: Vec<f64> = parse_list("ratios", value)?;
                if r.len() != 3 {
                    return Err(Error::Config("ratios needs three values: train,val,test".into()));
                }
                self.ratios = (r[0], r[1], r[2]);
            }
            "repeats" => self.repeats = parse("repeats", value)?,
            "only_repeat" => {
                self.only_repeat = if value == "none" {
                    None
                } else {
                    Some(parse("only_repeat", value)?)
                }
            }
            "patches_per_slide" => self.patches_per_slide = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "bootstrap" => self.bootstrap = parse(key, value)?,
            "widths" => {
                let w: Vec<usize> = parse_list("widths", value)?;
                self.widths = w
                    .try_into()
                    .map_err(|_| Error::Config("widths needs three values".into()))?;
            }
            "white_thresh" => self.white_thresh = parse(key, value)?,
            "var_thresh" => self.var_thresh = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::Config(format!(
                "split ratios must all be positive, got ({a}, {b}, {c})"
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {}", a + b + c)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let Some(r) = self.only_repeat {
            if r >= self.repeats {
                return Err(Error::Config(format!("only_repeat {r} is not below repeats {}", self.repeats)));
            }
        }
        if self.patches_per_slide == 0 || self.patch_size < 8 || !self.patch_size.is_multiple_of(8) {
            return Err(Error::Config(
                "patches_per_slide must be positive and patch_size a multiple of 8".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.task == Task::SurvivalCox && self.batch_size < 32 {
            return Err(Error::Config(format!(
                "survival_cox needs batch_size >= 32 for usable risk sets, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("need lr > 0, momentum in [0, 1), weight_decay >= 0".into()));
        }
        if self.bootstrap < 100 {
            return Err(Error::Config("bootstrap needs at least 100 resamples".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("widths must be positive".into()));
        }
        if !(self.white_thresh > 0.0 && self.white_thresh < 1.0) || self.var_thresh < 0.0 {
            return Err(Error::Config("need white_thresh in (0, 1) and var_thresh >= 0".into()));
        }
        if self.task == Task::Codel && self.grade_filter == GradeFilter::Only(Grade::IV) {
            return Err(Error::Config(
                "1p/19q codeletion is not evaluated for grade IV: there are no codeleted grade-IV cases".into(),
            ));
        }
        Ok(())
    }

    /// Repeat indices this config runs.
    pub fn repeat_indices(&self) -> Vec<usize> {
        match self.only_repeat {
            Some(r) => vec![r],
            None => (0..self.repeats).collect(),
        }
    }

    /// `<task>_<grade>_<repeat>` file stem.
    pub fn stem(&self, repeat: &str) -> String {
        format!("{}_{}_{}", self.task, self.grade_filter, repeat)
    }
}
