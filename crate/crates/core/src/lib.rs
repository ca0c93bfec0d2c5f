//! Refinement of background-subtraction detections.
//!
//! Raw foreground blobs are post-processed with optical flow (merging
//! fragments, splitting objects moving in opposite directions) and with
//! background-suppressed edges (tightening boxes, separating close objects,
//! rejecting background objects). A decision step picks the final boxes per
//! region and composes the refined foreground mask.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod background;
pub mod config;
pub mod decision;
pub mod edges;
pub mod error;
pub mod eval;
pub mod flow;
pub mod imaging;
pub mod io;
pub mod pipeline;
pub mod refine_merge;
pub mod refine_split;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use imaging::{BinaryMask, Blob, ColorFrame, GrayFrame, PixelBox};
pub use pipeline::{run_pipeline, FrameOutput, Pipeline, RunReport, RunSummary};
