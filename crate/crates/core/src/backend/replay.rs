//! Deterministic scripted backend.
//!
//! Outputs are looked up by the input's source tag (usually the image file
//! name); inputs without a scripted entry fall back to a function of the
//! tensor itself. Latencies are either slept for real or charged to a
//! [`VirtualClock`], which makes benchmark statistics exactly predictable.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendMetadata, Inference, InferenceBackend, InputTensor};
use crate::bench::Clock;
use crate::scorestore::{Detection, PrecisionMode};

/// What to return for inputs the script does not name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Mean tensor value mapped onto `[0, 1]` (assumes unit or symmetric scaling).
    #[default]
    MeanIntensity,
    Constant(f64),
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default = "default_precision")]
    pub precision_mode: PrecisionMode,
    #[serde(default)]
    pub input_resolution: Option<u32>,
    #[serde(default)]
    pub scores: HashMap<String, f64>,
    #[serde(default)]
    pub detections: HashMap<String, Vec<Detection>>,
    #[serde(default)]
    pub fallback: Fallback,
    /// Per-call latencies in milliseconds, cycled.
    #[serde(default)]
    pub latencies_ms: Vec<f64>,
    /// Sources whose inference fails.
    #[serde(default)]
    pub fail_sources: Vec<String>,
    /// Fail every call after this many successful ones.
    #[serde(default)]
    pub fail_after: Option<usize>,
    /// Scratch buffer allocated and touched on every call.
    #[serde(default)]
    pub allocate_bytes: usize,
    #[serde(default)]
    pub background_classes: Vec<String>,
}

fn default_model_name() -> String {
    "replay".into()
}

fn default_precision() -> PrecisionMode {
    PrecisionMode::Float
}

impl Default for ReplayScript {
    fn default() -> Self {
        ReplayScript {
            model_name: default_model_name(),
            precision_mode: default_precision(),
            input_resolution: None,
            scores: HashMap::new(),
            detections: HashMap::new(),
            fallback: Fallback::default(),
            latencies_ms: Vec::new(),
            fail_sources: Vec::new(),
            fail_after: None,
            allocate_bytes: 0,
            background_classes: Vec::new(),
        }
    }
}

/// Manually advanced monotonic clock shared between a replay backend and
/// the benchmark loop.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    nanos: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

#[derive(Debug)]
enum Latency {
    Sleep,
    Virtual(VirtualClock),
}

#[derive(Debug)]
pub struct ReplayBackend {
    script: ReplayScript,
    latency: Latency,
    calls: usize,
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Self {
        ReplayBackend {
            script,
            latency: Latency::Sleep,
            calls: 0,
        }
    }

    /// Charges scripted latencies to `clock` instead of sleeping.
    pub fn with_virtual_clock(mut self, clock: VirtualClock) -> Self {
        self.latency = Latency::Virtual(clock);
        self
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let load_err = |message: String| BackendError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let script: ReplayScript = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    fn lookup(&self, input: &InputTensor) -> Option<Inference> {
        let source = input.source.as_deref()?;
        let base = Path::new(source)
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(source);
        for key in [source, base] {
            if let Some(&s) = self.script.scores.get(key) {
                return Some(Inference::Classifier(s));
            }
            if let Some(ds) = self.script.detections.get(key) {
                return Some(Inference::Detector(ds.clone()));
            }
        }
        None
    }

    fn spend_latency(&self, call: usize) {
        if self.script.latencies_ms.is_empty() {
            return;
        }
        let ms = self.script.latencies_ms[call % self.script.latencies_ms.len()];
        let d = Duration::from_secs_f64(ms / 1000.0);
        match &self.latency {
            Latency::Sleep => std::thread::sleep(d),
            Latency::Virtual(clock) => clock.advance(d),
        }
    }
}

impl InferenceBackend for ReplayBackend {
    fn metadata(&self) -> BackendMetadata {
        BackendMetadata {
            backend_id: "replay".into(),
            model_name: self.script.model_name.clone(),
            precision_mode: self.script.precision_mode,
            input_resolution: self.script.input_resolution,
            background_classes: self.script.background_classes.clone(),
            quantization_warning: false,
        }
    }

    fn infer(&mut self, input: &InputTensor) -> Result<Inference, BackendError> {
        let call = self.calls;
        if self.script.fail_after.is_some_and(|n| call >= n) {
            return Err(BackendError::Inference(format!("scripted failure at call {call}")));
        }
        if let Some(src) = &input.source {
            if self.script.fail_sources.iter().any(|f| src.ends_with(f.as_str())) {
                return Err(BackendError::Inference(format!("scripted failure for {src}")));
            }
        }
        self.calls += 1;
        self.spend_latency(call);
        if self.script.allocate_bytes > 0 {
            let mut scratch = vec![0u8; self.script.allocate_bytes];
            // Touch one byte per page so the allocation becomes resident.
            for i in (0..scratch.len()).step_by(4096) {
                scratch[i] = (i & 0xff) as u8;
            }
            std::hint::black_box(&scratch);
        }
        if let Some(out) = self.lookup(input) {
            return Ok(out);
        }
        match self.script.fallback {
            Fallback::MeanIntensity => {
                let m = input.mean();
                // Symmetric inputs live in [-1, 1]; fold them back onto [0, 1].
                let min = input.data.iter().copied().fold(f32::INFINITY, f32::min);
                let score = if min < 0.0 { (m + 1.0) / 2.0 } else { m };
                Ok(Inference::Classifier(score.clamp(0.0, 1.0)))
            }
            Fallback::Constant(c) => Ok(Inference::Classifier(c)),
            Fallback::Error => Err(BackendError::Inference(format!(
                "no scripted output for {}",
                input.source.as_deref().unwrap_or("<unnamed input>")
            ))),
        }
    }
}
