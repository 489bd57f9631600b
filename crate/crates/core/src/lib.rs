//! Semantics sharing between two overlapping cameras.
//!
//! Class scores computed in a wide-angle camera are carried into a narrow
//! camera by a two-stage warp (a calibrated rotation homography, then a
//! residual optical flow), merged with the narrow camera's own scores by a
//! small trainable fusion head, and the fused result is sent back to refine
//! the wide camera inside the shared field of view.

pub mod camera;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod kv;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use camera::{CameraRig, Homography, Intrinsics, Rotation3};
pub use error::{Error, ErrorClass, Result, Stage};
pub use flow::{estimate_flow, two_stage_map, FlowConfig};
pub use fusion::{fuse_forward, FusionHead, FusionVariant, TrainConfig};

pub use metrics::{ConfusionMatrix, EvalReport, LossWeights};
pub use raster::{FlowField, GridMap, Image, LabelMap, Mask, ScoreMap, Size};
