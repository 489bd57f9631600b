//! Synthetic data: textured frames, random-transform flow samples, two-camera
//! scenes with exact correspondences, and degraded score maps.

mod degrade;
mod flow_sample;
mod scene;
mod texture;

pub use degrade::{degrade_scores, DegradeSpec};
pub use flow_sample::{flow_sample_with, gen_flow_sample, FlowSample, RandomTransformSpec, TransformParams};
pub use scene::{render_scene, Billboard, SceneClass, SceneKind, ScenePair, SynthScene, NUM_CLASSES};
pub use texture::{textured_frame, ValueNoise};
