//! ONNX classifier/detector backend built on tract.
//!
//! The model file may be accompanied by a `<model>.json` sidecar
//! ([`OnnxOptions`]) describing the input resolution, tensor layout and how
//! to read the output. Without a sidecar the input shape is taken from the
//! model and the output is read as a classifier head.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{BackendError, BackendMetadata, Inference, InferenceBackend, InputTensor};
use crate::scorestore::{Detection, PrecisionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Nchw,
    Nhwc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputSpec {
    /// Softmax/sigmoid head. With one output value it is taken as the
    /// nonempty probability; otherwise element `nonempty_index` is used.
    Classifier {
        #[serde(default = "one")]
        nonempty_index: usize,
    },
    /// Output `scores_output` holds one confidence per candidate box;
    /// `classes_output`, when given, holds the class id of each.
    Detector {
        scores_output: usize,
        #[serde(default)]
        classes_output: Option<usize>,
    },
}

fn one() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec::Classifier { nonempty_index: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OnnxOptions {
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub precision_mode: Option<PrecisionMode>,
    #[serde(default)]
    pub input_resolution: Option<u32>,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub background_classes: Vec<String>,
    #[serde(default)]
    pub quantization_warning: bool,
}

pub struct OnnxBackend {
    plan: TypedRunnableModel<TypedModel>,
    options: OnnxOptions,
    resolution: usize,
    model_name: String,
}

fn load_err(path: &Path, message: impl ToString) -> BackendError {
    BackendError::Load {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

impl OnnxBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let sidecar = sidecar_path(path);
        let options: OnnxOptions = if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| load_err(&sidecar, e))?;
            serde_json::from_str(&text).map_err(|e| load_err(&sidecar, e))?
        } else {
            OnnxOptions::default()
        };
        Self::load_with(path, options)
    }

    pub fn load_with(path: &Path, options: OnnxOptions) -> Result<Self, BackendError> {
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| load_err(path, e))?;
        let resolution = match options.input_resolution {
            Some(r) => r as usize,
            None => {
                let fact = model.input_fact(0).map_err(|e| load_err(path, e))?;
                let dims = fact.shape.as_concrete_finite().map_err(|e| load_err(path, e))?;
                let dims = dims.ok_or_else(|| load_err(path, "input shape is symbolic; give input_resolution in the sidecar"))?;
                match options.layout {
                    Layout::Nchw => dims.get(2).copied(),
                    Layout::Nhwc => dims.get(1).copied(),
                }
                .ok_or_else(|| load_err(path, "expected a rank-4 input"))?
            }
        };
        let shape: [usize; 4] = match options.layout {
            Layout::Nchw => [1, 3, resolution, resolution],
            Layout::Nhwc => [1, resolution, resolution, 3],
        };
        let plan = model
            .with_input_fact(0, f32::fact(shape).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| load_err(path, e))?;
        let model_name = options.model_name.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "onnx".into())
        });
        Ok(OnnxBackend {
            plan,
            options,
            resolution,
            model_name,
        })
    }

    fn to_tensor(&self, input: &InputTensor) -> Result<Tensor, BackendError> {
        let r = self.resolution;
        if input.height != r || input.width != r || input.channels != 3 {
            return Err(BackendError::Shape {
                expected: vec![r, r, 3],
                got: input.shape().to_vec(),
            });
        }
        let at = |y: usize, x: usize, c: usize| input.data[(y * r + x) * 3 + c];
        let tensor: Tensor = match self.options.layout {
            Layout::Nchw => tract_ndarray::Array4::from_shape_fn((1, 3, r, r), |(_, c, y, x)| at(y, x, c)).into(),
            Layout::Nhwc => tract_ndarray::Array4::from_shape_vec((1, r, r, 3), input.data.clone())
                .map_err(|e| BackendError::Inference(e.to_string()))?
                .into(),
        };
        Ok(tensor)
    }
}

fn flat_f32(t: &TValue) -> Result<Vec<f32>, BackendError> {
    let t = t
        .cast_to::<f32>()
        .map_err(|e| BackendError::Inference(e.to_string()))?;
    let view = t
        .to_array_view::<f32>()
        .map_err(|e| BackendError::Inference(e.to_string()))?;
    Ok(view.iter().copied().collect())
}

impl InferenceBackend for OnnxBackend {
    fn metadata(&self) -> BackendMetadata {
        BackendMetadata {
            backend_id: "onnx".into(),
            model_name: self.model_name.clone(),
            precision_mode: self.options.precision_mode.unwrap_or(PrecisionMode::Float),
            input_resolution: Some(self.resolution as u32),
            background_classes: self.options.background_classes.clone(),
            quantization_warning: self.options.quantization_warning,
        }
    }

    fn infer(&mut self, input: &InputTensor) -> Result<Inference, BackendError> {
        let tensor = self.to_tensor(input)?;
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| BackendError::Inference(e.to_string()))?;
        let output = |i: usize| {
            outputs
                .get(i)
                .ok_or_else(|| BackendError::Inference(format!("model has no output {i}")))
                .and_then(flat_f32)
        };
        match &self.options.output {
            OutputSpec::Classifier { nonempty_index } => {
                let values = output(0)?;
                let p = match values.len() {
                    1 => values[0],
                    _ => *values.get(*nonempty_index).ok_or_else(|| {
                        BackendError::Inference(format!(
                            "classifier output has {} values, index {nonempty_index} requested",
                            values.len()
                        ))
                    })?,
                };
                Ok(Inference::Classifier((p as f64).clamp(0.0, 1.0)))
            }
            OutputSpec::Detector {
                scores_output,
                classes_output,
            } => {
                let scores = output(*scores_output)?;
                let classes = match classes_output {
                    Some(i) => Some(output(*i)?),
                    None => None,
                };
                let detections = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let class_id = classes
                            .as_ref()
                            .and_then(|c| c.get(i))
                            .map(|c| format!("{}", *c as i64))
                            .unwrap_or_else(|| "object".into());
                        Detection::new(class_id, (s as f64).clamp(0.0, 1.0))
                    })
                    .collect();
                Ok(Inference::Detector(detections))
            }
        }
    }
}
