//! Patch-based residual CNN pipeline for glioma pathology images: patch
//! extraction, network training with classification or Cox heads,
//! slide-level aggregation and the evaluation metrics.

pub mod aggregate;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod nncore;

pub use error::{Error, Result};

/// Keeps large activation buffers inside the glibc heap instead of mapping
/// and unmapping them on every allocation, which otherwise costs a page fault
/// per 4 KiB on each training step. Safe to call more than once.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
