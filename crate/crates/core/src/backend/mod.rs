//! Inference backends.
//!
//! A backend turns a preprocessed input tensor into either a nonempty-class
//! probability (classifiers) or a list of detections (detectors). Backends
//! are looked up by name; `replay` is always available and needs no model
//! runtime, `onnx` is compiled in with the `onnx` feature.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scorestore::{reduce_detections_excluding, Detection, PrecisionMode, ScoreError};

pub mod replay;
#[cfg(feature = "onnx")]
pub mod onnx;

pub use replay::{ReplayBackend, ReplayScript, VirtualClock};

/// Environment variable naming the default backend.
pub const BACKEND_ENV: &str = "TRAPSIFT_BACKEND";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("unknown backend {0:?}")]
    Unknown(String),
    #[error("failed to load model {path}: {message}")]
    Load { path: String, message: String },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("input shape {got:?} does not match the model's {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Row-major `height × width × channels` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    /// Where the tensor came from (file name or synthetic tag).
    pub source: Option<String>,
}

impl InputTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "tensor size mismatch");
        InputTensor {
            height,
            width,
            channels,
            data,
            source: None,
        }
    }

    /// A constant tensor, used as the default benchmark input.
    pub fn filled(size: usize, value: f32) -> Self {
        Self::new(size, size, 3, vec![value; size * size * 3])
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    /// Probability of the nonempty class.
    Classifier(f64),
    Detector(Vec<Detection>),
}

impl Inference {
    pub fn nonempty_score(&self, background: &[String]) -> Result<f64, ScoreError> {
        match self {
            Inference::Classifier(p) => {
                if (0.0..=1.0).contains(p) {
                    Ok(*p)
                } else {
                    Err(ScoreError::OutOfRange {
                        value: *p,
                        context: None,
                    })
                }
            }
            Inference::Detector(ds) => reduce_detections_excluding(ds, background),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMetadata {
    pub backend_id: String,
    pub model_name: String,
    pub precision_mode: PrecisionMode,
    pub input_resolution: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub background_classes: Vec<String>,
    /// Set when the model uses operations known to quantize poorly.
    #[serde(default)]
    pub quantization_warning: bool,
}

pub trait InferenceBackend: Send {
    fn metadata(&self) -> BackendMetadata;

    fn infer(&mut self, input: &InputTensor) -> Result<Inference, BackendError>;
}

impl<B: InferenceBackend + ?Sized> InferenceBackend for Box<B> {
    fn metadata(&self) -> BackendMetadata {
        (**self).metadata()
    }

    fn infer(&mut self, input: &InputTensor) -> Result<Inference, BackendError> {
        (**self).infer(input)
    }
}

pub fn available_backends() -> Vec<&'static str> {
    let mut names = vec!["replay"];
    if cfg!(feature = "onnx") {
        names.push("onnx");
    }
    names
}

/// Loads a backend by name from a model artifact.
pub fn load_backend(name: &str, artifact: &Path) -> Result<Box<dyn InferenceBackend>, BackendError> {
    match name {
        "replay" => Ok(Box::new(ReplayBackend::load(artifact)?)),
        #[cfg(feature = "onnx")]
        "onnx" => Ok(Box::new(onnx::OnnxBackend::load(artifact)?)),
        other => Err(BackendError::Unknown(other.to_string())),
    }
}
