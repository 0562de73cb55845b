//! Latency and memory benchmarking of inference backends.
//!
//! A benchmark runs `warmup_runs` unmeasured calls, then `measured_runs`
//! timed calls, timing only the `infer` call. The mean is the headline
//! number; the full per-run list is kept so every aggregate can be
//! recomputed from the report.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendMetadata, InferenceBackend, InputTensor};

mod memory;

pub use memory::{measure_memory, read_rss, MemoryError, MemoryReport, RssSample};

pub const DEFAULT_WARMUP_RUNS: usize = 5;
pub const DEFAULT_MEASURED_RUNS: usize = 50;

pub trait Clock {
    /// Time since an arbitrary fixed origin; never decreases.
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub warmup_runs: usize,
    pub measured_runs: usize,
    /// Inputs are used round-robin; a single input repeats it every call.
    pub inputs: Vec<InputTensor>,
    pub input_label: String,
}

impl BenchConfig {
    pub fn new(input: InputTensor) -> Self {
        BenchConfig {
            warmup_runs: DEFAULT_WARMUP_RUNS,
            measured_runs: DEFAULT_MEASURED_RUNS,
            input_label: input.source.clone().unwrap_or_else(|| "synthetic".into()),
            inputs: vec![input],
        }
    }

    pub fn runs(mut self, warmup: usize, measured: usize) -> Self {
        self.warmup_runs = warmup;
        self.measured_runs = measured;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub warmup_runs: usize,
    pub measured_runs: usize,
    pub input: String,
    pub distinct_inputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Percentile with linear interpolation between closest ranks
/// (`rank = q * (n - 1)` over the sorted sample).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl LatencyStats {
    pub fn from_runs(runs: &[f64]) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let mut sorted = runs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(LatencyStats {
            // Clamp guards the last-ulp drift of a summed mean on constant samples.
            mean_ms: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
            std_ms: var.sqrt(),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
            p50_ms: percentile(&sorted, 0.5),
            p95_ms: percentile(&sorted, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: BackendMetadata,
    #[serde(flatten)]
    pub stats: LatencyStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_memory_bytes: Option<u64>,
    pub runs: Vec<f64>,
    pub config: ConfigEcho,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("measured_runs must be at least 1")]
    NoRuns,
    #[error("benchmark needs at least one input")]
    NoInput,
    #[error("backend failed after {completed} measured runs: {source}")]
    Backend {
        completed: usize,
        /// Statistics over the runs completed before the failure.
        partial: Option<Box<BenchReport>>,
        #[source]
        source: BackendError,
    },
}

pub fn run_bench<B: InferenceBackend + ?Sized>(backend: &mut B, config: &BenchConfig) -> Result<BenchReport, BenchError> {
    run_bench_with_clock(backend, config, &MonotonicClock::default())
}

pub fn run_bench_with_clock<B, C>(backend: &mut B, config: &BenchConfig, clock: &C) -> Result<BenchReport, BenchError>
where
    B: InferenceBackend + ?Sized,
    C: Clock + ?Sized,
{
    if config.measured_runs == 0 {
        return Err(BenchError::NoRuns);
    }
    if config.inputs.is_empty() {
        return Err(BenchError::NoInput);
    }
    let metadata = backend.metadata();
    let echo = ConfigEcho {
        warmup_runs: config.warmup_runs,
        measured_runs: config.measured_runs,
        input: config.input_label.clone(),
        distinct_inputs: config.inputs.len(),
    };
    let report = |runs: Vec<f64>| {
        LatencyStats::from_runs(&runs).map(|stats| BenchReport {
            backend: metadata.clone(),
            stats,
            peak_memory_bytes: None,
            runs,
            config: echo.clone(),
        })
    };

    let mut inputs = config.inputs.iter().cycle();
    for _ in 0..config.warmup_runs {
        let input = inputs.next().expect("cycle over non-empty inputs");
        if let Err(source) = backend.infer(input) {
            return Err(BenchError::Backend {
                completed: 0,
                partial: None,
                source,
            });
        }
    }

    let mut runs = Vec::with_capacity(config.measured_runs);
    for _ in 0..config.measured_runs {
        let input = inputs.next().expect("cycle over non-empty inputs");
        let start = clock.now();
        let result = backend.infer(input);
        let elapsed = clock.now().saturating_sub(start);
        if let Err(source) = result {
            return Err(BenchError::Backend {
                completed: runs.len(),
                partial: report(runs).map(Box::new),
                source,
            });
        }
        runs.push(elapsed.as_secs_f64() * 1000.0);
    }
    Ok(report(runs).expect("at least one measured run"))
}
