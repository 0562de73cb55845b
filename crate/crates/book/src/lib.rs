//! The trapsift guide. Each module holds one chapter so its snippets run as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/labels-and-splits.md")]
pub mod labels_and_splits {}

#[doc = include_str!("../../../book/src/scores.md")]
pub mod scores {}

#[doc = include_str!("../../../book/src/calibration.md")]
pub mod calibration {}

#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}

#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
