//! Experiment orchestration: configuration, stratified splits, training and
//! evaluation of the four tasks, and report files.

mod config;
mod report;
mod split;
mod train;

pub use config::{ExperimentConfig, GradeFilter, Task};
pub use report::{
    emit_report, read_metrics_csv, summarize_reports, write_metrics_csv, ExperimentReport, MetricsRow, SlidePrediction,
    METRICS_HEADER,
};
pub use split::{
    derive_survival_classes, eligible, stratified_split, stratum_labels, Split, SplitAssignment, SurvivalClasses,
};
pub use train::{
    evaluate, load_patch_sets, predict_slides, run_experiment, train_task, EpochLog, ModelMeta, RepeatResult,
    Standardizer,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for a named randomness stream (`split`, `init`, `shuffle`,
/// `bootstrap`, …) derived from the run seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when 0.
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> crate::Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
