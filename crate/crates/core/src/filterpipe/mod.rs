//! The deployable filter: decode and preprocess images, score them, and
//! discard those scoring below the calibrated threshold. Also an offline
//! simulator that projects the same decisions onto a labeled EvalSet.
//!
//! Any image that cannot be read, decoded or moved is kept. The only path
//! to a discard action is a successful score below the threshold.
//!
//! Decoding runs on a small worker pool; inference and every file action
//! happen on the calling thread, one image at a time. At most
//! `FilterConfig::in_flight` decoded tensors wait for inference.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, InferenceBackend, InputTensor};
use crate::metrics::{is_nonempty, metrics_at, CalibrationResult, OperatingPoint};
use crate::scorestore::EvalSet;

mod preprocess;
pub mod watch;

pub use preprocess::{preprocess, PixelScale, PreprocessError, PreprocessSpec, ResizeMethod, SUPPORTED_SIZES};

/// Appended to an image path to form its sidecar marker.
pub const MARKER_SUFFIX: &str = ".trapsift.json";

pub const DEFAULT_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterAction {
    #[default]
    MoveToDir,
    Delete,
    MarkOnly,
}

impl std::str::FromStr for FilterAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "move" | "move_to_dir" => Ok(FilterAction::MoveToDir),
            "delete" => Ok(FilterAction::Delete),
            "mark" | "mark_only" => Ok(FilterAction::MarkOnly),
            other => Err(format!("unknown action {other:?} (move, delete, mark)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub threshold: f64,
    pub action: FilterAction,
    /// Destination for discarded images under [`FilterAction::MoveToDir`].
    pub quarantine_dir: Option<PathBuf>,
    /// Write `<image>.trapsift.json` next to every kept image.
    pub write_markers: bool,
    /// JSON Lines decision log, appended and flushed per decision.
    pub log_path: Option<PathBuf>,
    pub in_flight: usize,
    pub workers: usize,
}

impl FilterConfig {
    pub fn new(threshold: f64, action: FilterAction) -> Self {
        FilterConfig {
            threshold,
            action,
            quarantine_dir: None,
            write_markers: false,
            log_path: None,
            in_flight: DEFAULT_IN_FLIGHT,
            workers: std::thread::available_parallelism().map_or(2, |n| n.get().min(4)),
        }
    }

    pub fn from_calibration(c: &CalibrationResult, action: FilterAction) -> Self {
        Self::new(c.threshold, action)
    }

    pub fn quarantine(mut self, dir: impl Into<PathBuf>) -> Self {
        self.quarantine_dir = Some(dir.into());
        self
    }

    pub fn log_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub path: PathBuf,
    /// Absent when the image could not be scored.
    pub nonempty_score: Option<f64>,
    pub decision: Decision,
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_size: Option<u64>,
}

impl FilterDecision {
    /// Discarded and the configured action went through.
    pub fn discarded(&self) -> bool {
        self.decision == Decision::Discard && self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub n_processed: u64,
    pub n_discarded: u64,
    pub bytes_saved: u64,
    pub discard_fraction: f64,
    #[serde(default)]
    pub n_errors: u64,
}

impl SavingsReport {
    fn new(n_processed: u64, n_discarded: u64, bytes_saved: u64, n_errors: u64) -> Self {
        SavingsReport {
            n_processed,
            n_discarded,
            bytes_saved,
            discard_fraction: if n_processed == 0 {
                0.0
            } else {
                n_discarded as f64 / n_processed as f64
            },
            n_errors,
        }
    }

    pub fn from_decisions(decisions: &[FilterDecision]) -> Self {
        let discarded = decisions.iter().filter(|d| d.discarded());
        SavingsReport::new(
            decisions.len() as u64,
            discarded.clone().count() as u64,
            discarded.map(|d| d.byte_size.unwrap_or(0)).sum(),
            decisions.iter().filter(|d| d.error.is_some()).count() as u64,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    /// One decision per input, in input order.
    pub decisions: Vec<FilterDecision>,
    pub report: SavingsReport,
}

impl FilterOutcome {
    fn extend(&mut self, other: FilterOutcome) {
        self.decisions.extend(other.decisions);
        self.report = SavingsReport::from_decisions(&self.decisions);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("decision log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend failed after {} decisions: {source}", partial.decisions.len())]
    Backend {
        partial: Box<FilterOutcome>,
        #[source]
        source: BackendError,
    },
}

struct Prepared {
    index: usize,
    path: PathBuf,
    byte_size: Option<u64>,
    tensor: Result<InputTensor, String>,
}

fn prepare(index: usize, path: PathBuf, spec: &PreprocessSpec) -> Prepared {
    match fs::read(&path) {
        Ok(bytes) => Prepared {
            index,
            byte_size: Some(bytes.len() as u64),
            tensor: preprocess(&bytes, spec)
                .map(|t| t.with_source(path.to_string_lossy()))
                .map_err(|e| e.to_string()),
            path,
        },
        Err(e) => Prepared {
            index,
            path,
            byte_size: None,
            tensor: Err(format!("read failed: {e}")),
        },
    }
}

/// Yields prepared images in input order so that actions and log lines
/// follow the input list regardless of which worker finished first.
struct InOrder<'a> {
    rx: &'a Receiver<Prepared>,
    next: usize,
    held: BTreeMap<usize, Prepared>,
}

impl<'a> InOrder<'a> {
    fn new(rx: &'a Receiver<Prepared>) -> Self {
        InOrder {
            rx,
            next: 0,
            held: BTreeMap::new(),
        }
    }
}

impl Iterator for InOrder<'_> {
    type Item = Prepared;

    fn next(&mut self) -> Option<Prepared> {
        loop {
            if let Some(p) = self.held.remove(&self.next) {
                self.next += 1;
                return Some(p);
            }
            let p = self.rx.recv().ok()?;
            self.held.insert(p.index, p);
        }
    }
}

fn quarantine_target(dir: &Path, path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    let mut target = dir.join(&name);
    let mut n = 1;
    while target.exists() {
        let mut alt = name.clone();
        alt.push(format!(".{n}"));
        target = dir.join(alt);
        n += 1;
    }
    target
}

fn move_file(from: &Path, to: &Path) -> std::io::Result<()> {
    match fs::rename(from, to) {
        Ok(()) => Ok(()),
        Err(_) => {
            // Cross-device: copy, then remove the original only once the copy exists.
            fs::copy(from, to)?;
            fs::remove_file(from)
        }
    }
}

fn write_marker(d: &FilterDecision) -> std::io::Result<()> {
    let mut name = d.path.as_os_str().to_owned();
    name.push(MARKER_SUFFIX);
    let text = serde_json::to_string(d).expect("decision json");
    fs::write(PathBuf::from(name), text)
}

fn apply_action(cfg: &FilterConfig, d: &mut FilterDecision) {
    if d.decision != Decision::Discard {
        return;
    }
    let result = match cfg.action {
        FilterAction::MarkOnly => Ok(()),
        FilterAction::Delete => fs::remove_file(&d.path),
        FilterAction::MoveToDir => {
            let dir = cfg.quarantine_dir.as_ref().expect("validated in run_filter");
            let target = quarantine_target(dir, &d.path);
            move_file(&d.path, &target)
        }
    };
    if let Err(e) = result {
        log::warn!("keeping {}: discard action failed: {e}", d.path.display());
        d.error = Some(format!("discard action failed: {e}"));
    }
}

struct DecisionLog {
    path: PathBuf,
    out: Option<BufWriter<fs::File>>,
}

impl DecisionLog {
    fn open(path: Option<&Path>) -> Result<Self, FilterError> {
        let out = match path {
            Some(p) => Some(BufWriter::new(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|source| FilterError::Log {
                        path: p.display().to_string(),
                        source,
                    })?,
            )),
            None => None,
        };
        Ok(DecisionLog {
            path: path.map(Path::to_path_buf).unwrap_or_default(),
            out,
        })
    }

    fn append(&mut self, d: &FilterDecision) -> Result<(), FilterError> {
        if let Some(out) = &mut self.out {
            let err = |source| FilterError::Log {
                path: self.path.display().to_string(),
                source,
            };
            serde_json::to_writer(&mut *out, d).map_err(|e| err(e.into()))?;
            out.write_all(b"\n").map_err(err)?;
            out.flush().map_err(err)?;
        }
        Ok(())
    }
}

/// Scores every input and applies the configured action to discards.
pub fn run_filter<B: InferenceBackend + ?Sized>(
    cfg: &FilterConfig,
    spec: &PreprocessSpec,
    backend: &mut B,
    inputs: &[PathBuf],
) -> Result<FilterOutcome, FilterError> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(FilterError::Config(format!("threshold {} outside [0, 1]", cfg.threshold)));
    }
    if cfg.action == FilterAction::MoveToDir {
        let dir = cfg
            .quarantine_dir
            .as_ref()
            .ok_or_else(|| FilterError::Config("move action needs a quarantine directory".into()))?;
        fs::create_dir_all(dir).map_err(|e| FilterError::Config(format!("quarantine {}: {e}", dir.display())))?;
    }
    let metadata = backend.metadata();
    spec.validate_for(&metadata)
        .map_err(|e| FilterError::Config(e.to_string()))?;
    let background = metadata.background_classes;
    let mut log = DecisionLog::open(cfg.log_path.as_deref())?;

    let in_flight = cfg.in_flight.max(1);
    let workers = cfg.workers.max(1);
    let mut decisions: Vec<(usize, FilterDecision)> = Vec::with_capacity(inputs.len());
    let mut failure: Option<BackendError> = None;
    let mut log_failure: Option<FilterError> = None;

    std::thread::scope(|s| {
        let (job_tx, job_rx) = bounded::<(usize, PathBuf)>(in_flight);
        let (done_tx, done_rx) = bounded::<Prepared>(in_flight);
        s.spawn(move || {
            for (i, p) in inputs.iter().enumerate() {
                if job_tx.send((i, p.clone())).is_err() {
                    break;
                }
            }
        });
        for _ in 0..workers {
            let job_rx = job_rx.clone();
            let done_tx = done_tx.clone();
            s.spawn(move || {
                for (i, path) in job_rx {
                    if done_tx.send(prepare(i, path, spec)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(job_rx);
        drop(done_tx);

        for prepared in InOrder::new(&done_rx) {
            let mut d = FilterDecision {
                path: prepared.path,
                nonempty_score: None,
                decision: Decision::Keep,
                latency_ms: None,
                error: None,
                byte_size: prepared.byte_size,
            };
            match prepared.tensor {
                Err(e) => d.error = Some(e),
                Ok(tensor) => {
                    let start = Instant::now();
                    let inferred = backend.infer(&tensor);
                    d.latency_ms = Some(start.elapsed().as_secs_f64() * 1000.0);
                    match inferred.map_err(BackendError::from).and_then(|inf| {
                        inf.nonempty_score(&background).map_err(BackendError::from)
                    }) {
                        Ok(score) => {
                            d.nonempty_score = Some(score);
                            if !is_nonempty(score, cfg.threshold) {
                                d.decision = Decision::Discard;
                            }
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
            }
            apply_action(cfg, &mut d);
            if cfg.write_markers && !d.discarded() {
                if let Err(e) = write_marker(&d) {
                    log::warn!("marker for {}: {e}", d.path.display());
                }
            }
            if let Err(e) = log.append(&d) {
                log_failure = Some(e);
                decisions.push((prepared.index, d));
                break;
            }
            decisions.push((prepared.index, d));
        }
        // Dropping the receiver unblocks workers when stopping early.
        drop(done_rx);
    });

    decisions.sort_by_key(|(i, _)| *i);
    let decisions: Vec<FilterDecision> = decisions.into_iter().map(|(_, d)| d).collect();
    let report = SavingsReport::from_decisions(&decisions);
    let outcome = FilterOutcome { decisions, report };
    if let Some(e) = log_failure {
        return Err(e);
    }
    match failure {
        Some(source) => Err(FilterError::Backend {
            partial: Box::new(outcome),
            source,
        }),
        None => Ok(outcome),
    }
}

/// Writes decisions as JSON Lines.
pub fn write_decisions(mut w: impl Write, decisions: &[FilterDecision]) -> std::io::Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Projects the filter onto a labeled EvalSet: images scoring below `t`
/// are discarded. Byte savings are summed when sizes are given.
pub fn simulate_filter(
    e: &EvalSet,
    t: f64,
    byte_sizes: Option<&HashMap<String, u64>>,
) -> (OperatingPoint, SavingsReport) {
    let point = metrics_at(e, t);
    let mut discarded = 0u64;
    let mut bytes = 0u64;
    for item in &e.items {
        if !is_nonempty(item.nonempty_score, t) {
            discarded += 1;
            if let Some(sizes) = byte_sizes {
                bytes += sizes.get(&item.image_id).copied().unwrap_or(0);
            }
        }
    }
    (point, SavingsReport::new(e.len() as u64, discarded, bytes, 0))
}
