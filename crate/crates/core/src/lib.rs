//! Empty-image filtering for camera traps.
//!
//! The crate covers the whole evaluation and deployment loop for a model
//! that decides whether a camera-trap image contains an animal:
//!
//! * [`manifest`]: parse COCO Camera Traps manifests and label images
//!   empty/nonempty.
//! * [`splitgen`]: location, season and holdout splits, per-location caps,
//!   class balancing.
//! * [`scorestore`]: score files, detector output reduction, joining
//!   scores with labels.
//! * [`metrics`]: precision-recall curves, threshold calibration at a
//!   target nonempty recall, PR-AUC, run comparison.
//! * [`bench`]: latency and memory measurement of inference backends.
//! * [`filterpipe`]: the keep/discard pipeline and its offline simulator.
//! * [`report`]: CSV, JSON and SVG outputs.

pub mod backend;
pub mod bench;
pub mod filterpipe;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod sampling;
pub mod scorestore;
pub mod splitgen;

pub use manifest::{Label, LabeledSet};
pub use metrics::{CalibrationResult, OperatingPoint, PrCurve};
pub use scorestore::EvalSet;
