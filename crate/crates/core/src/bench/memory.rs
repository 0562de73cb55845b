//! Peak resident memory of the current process, read from `/proc`.

use std::fs;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, InferenceBackend, InputTensor};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory introspection is not supported on this platform")]
    Unsupported,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RssSample {
    pub current_bytes: u64,
    /// High-water mark since process start or the last reset.
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    /// Peak resident set size during the load + infer cycle.
    pub peak_rss_bytes: u64,
    pub baseline_rss_bytes: u64,
    /// Whether the high-water mark could be reset before the cycle. When it
    /// could not, the peak may predate the cycle.
    pub peak_was_reset: bool,
}

impl MemoryReport {
    pub fn increase_bytes(&self) -> u64 {
        self.peak_rss_bytes.saturating_sub(self.baseline_rss_bytes)
    }
}

fn kib_field(status: &str, key: &str) -> Option<u64> {
    status
        .lines()
        .find(|l| l.starts_with(key))?
        .split_whitespace()
        .nth(1)?
        .parse::<u64>()
        .ok()
        .map(|kib| kib * 1024)
}

pub fn read_rss() -> Result<RssSample, MemoryError> {
    let status = fs::read_to_string("/proc/self/status").map_err(|_| MemoryError::Unsupported)?;
    match (kib_field(&status, "VmRSS:"), kib_field(&status, "VmHWM:")) {
        (Some(current_bytes), Some(peak_bytes)) => Ok(RssSample {
            current_bytes,
            peak_bytes,
        }),
        _ => Err(MemoryError::Unsupported),
    }
}

fn reset_peak() -> bool {
    fs::write("/proc/self/clear_refs", "5").is_ok()
}

/// Loads a backend, runs one inference and reports the peak resident
/// memory over that cycle. The loaded backend is handed back.
pub fn measure_memory<B, F>(load: F, input: &InputTensor) -> Result<(B, MemoryReport), MemoryError>
where
    B: InferenceBackend,
    F: FnOnce() -> Result<B, BackendError>,
{
    let before = read_rss()?;
    let peak_was_reset = reset_peak();
    let mut backend = load()?;
    backend.infer(input)?;
    let after = read_rss()?;
    Ok((
        backend,
        MemoryReport {
            peak_rss_bytes: after.peak_bytes.max(after.current_bytes),
            baseline_rss_bytes: before.current_bytes,
            peak_was_reset,
        },
    ))
}
