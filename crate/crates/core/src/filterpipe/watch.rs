//! Watched-directory input for the filter.
//!
//! File-system events are noisy: a single copy produces a create and
//! several modify events, editors rename, and some platforms repeat events.
//! [`WatchQueue`] turns that stream into "each matching file once, after
//! its size has stopped changing".

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use glob::{MatchOptions, Pattern};
use notify::{RecursiveMode, Watcher};

use super::{run_filter, FilterConfig, FilterError, FilterOutcome, SavingsReport, MARKER_SUFFIX};
use crate::backend::InferenceBackend;
use crate::filterpipe::PreprocessSpec;

pub const DEFAULT_PATTERNS: [&str; 3] = ["*.jpg", "*.jpeg", "*.png"];
pub const DEFAULT_SETTLE: Duration = Duration::from_millis(250);

const MATCH: MatchOptions = MatchOptions {
    case_sensitive: false,
    require_literal_separator: false,
    require_literal_leading_dot: true,
};

#[derive(Debug)]
pub struct WatchQueue {
    patterns: Vec<Pattern>,
    settle: Duration,
    seen: HashSet<PathBuf>,
    pending: HashMap<PathBuf, (Option<u64>, Instant)>,
}

impl WatchQueue {
    pub fn new<S: AsRef<str>>(patterns: &[S], settle: Duration) -> Result<Self, glob::PatternError> {
        let patterns = patterns
            .iter()
            .map(|p| Pattern::new(p.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(WatchQueue {
            patterns,
            settle,
            seen: HashSet::new(),
            pending: HashMap::new(),
        })
    }

    pub fn matches(&self, path: &Path) -> bool {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            return false;
        };
        !name.ends_with(MARKER_SUFFIX) && self.patterns.iter().any(|p| p.matches_with(name, MATCH))
    }

    /// Records an event for `path`. Returns whether the path is (still) pending.
    pub fn offer(&mut self, path: &Path, now: Instant) -> bool {
        if !self.matches(path) || self.seen.contains(path) {
            return false;
        }
        self.pending
            .entry(path.to_path_buf())
            .and_modify(|e| e.1 = now)
            .or_insert((None, now));
        true
    }

    /// Marks a path as handled without processing it.
    pub fn mark_seen(&mut self, path: &Path) {
        self.pending.remove(path);
        self.seen.insert(path.to_path_buf());
    }

    /// Paths whose size has been stable for the settle time, sorted. Each
    /// path is returned at most once over the queue's lifetime.
    pub fn ready<F>(&mut self, now: Instant, size_of: F) -> Vec<PathBuf>
    where
        F: Fn(&Path) -> Option<u64>,
    {
        let mut ready = Vec::new();
        let mut vanished = Vec::new();
        for (path, (last_size, since)) in self.pending.iter_mut() {
            let Some(size) = size_of(path) else {
                vanished.push(path.clone());
                continue;
            };
            if *last_size != Some(size) {
                *last_size = Some(size);
                *since = now;
                continue;
            }
            if now.duration_since(*since) >= self.settle {
                ready.push(path.clone());
            }
        }
        for p in vanished {
            self.pending.remove(&p);
        }
        for p in &ready {
            self.mark_seen(p);
        }
        ready.sort();
        ready
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn processed(&self) -> usize {
        self.seen.len()
    }
}

fn file_size(path: &Path) -> Option<u64> {
    std::fs::metadata(path).ok().filter(|m| m.is_file()).map(|m| m.len())
}

fn marker_exists(path: &Path) -> bool {
    let mut name = path.as_os_str().to_owned();
    name.push(MARKER_SUFFIX);
    Path::new(&name).exists()
}

#[derive(Debug, Clone)]
pub struct WatchOptions {
    pub patterns: Vec<String>,
    pub settle: Duration,
    pub poll: Duration,
    /// Stop after this long without any pending work. `None` runs until `stop` is set.
    pub idle_timeout: Option<Duration>,
}

impl Default for WatchOptions {
    fn default() -> Self {
        WatchOptions {
            patterns: DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect(),
            settle: DEFAULT_SETTLE,
            poll: Duration::from_millis(50),
            idle_timeout: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WatchError {
    #[error("bad pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("watch error: {0}")]
    Notify(#[from] notify::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Filters files as they appear in `dir` (non-recursive). Files present at
/// start are processed too, except those already carrying a marker.
pub fn watch_directory<B: InferenceBackend + ?Sized>(
    dir: &Path,
    cfg: &FilterConfig,
    spec: &PreprocessSpec,
    backend: &mut B,
    options: &WatchOptions,
    stop: &AtomicBool,
) -> Result<FilterOutcome, WatchError> {
    let mut queue = WatchQueue::new(&options.patterns, options.settle)?;
    let (tx, rx) = mpsc::channel();
    let mut watcher = notify::recommended_watcher(move |res: notify::Result<notify::Event>| {
        if let Ok(event) = res {
            for p in event.paths {
                let _ = tx.send(p);
            }
        }
    })?;
    watcher.watch(dir, RecursiveMode::NonRecursive)?;

    let start = Instant::now();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if marker_exists(&path) {
            queue.mark_seen(&path);
        } else {
            queue.offer(&path, start);
        }
    }

    let mut outcome = FilterOutcome::default();
    let mut last_activity = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match rx.recv_timeout(options.poll) {
            Ok(path) => {
                if queue.offer(&path, Instant::now()) {
                    last_activity = Instant::now();
                }
                while let Ok(path) = rx.try_recv() {
                    queue.offer(&path, Instant::now());
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
        let ready = queue.ready(Instant::now(), file_size);
        if !ready.is_empty() {
            last_activity = Instant::now();
            match run_filter(cfg, spec, backend, &ready) {
                Ok(batch) => outcome.extend(batch),
                Err(FilterError::Backend { partial, source }) => {
                    outcome.extend(*partial);
                    return Err(FilterError::Backend {
                        partial: Box::new(outcome),
                        source,
                    }
                    .into());
                }
                Err(e) => return Err(e.into()),
            }
        }
        if let Some(idle) = options.idle_timeout {
            if queue.pending() == 0 && last_activity.elapsed() >= idle {
                break;
            }
        }
    }
    outcome.report = SavingsReport::from_decisions(&outcome.decisions);
    Ok(outcome)
}
