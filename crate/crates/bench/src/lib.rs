//! Fixtures for the kernel benchmarks.

use semshare::synth::{gen_flow_sample, render_scene, textured_frame, FlowSample, RandomTransformSpec, SceneKind, ScenePair, SynthScene, NUM_CLASSES};
use semshare::{CameraRig, FusionHead, FusionVariant, Mask, ScoreMap, Size};

/// A seeded warped-texture pair at `side × side`.
pub fn flow_pair(side: usize, seed: u64) -> (semshare::Image, FlowSample) {
    let img = textured_frame(Size::new(side, side), seed);
    let sample = gen_flow_sample(&img, &RandomTransformSpec::new(seed)).expect("flow sample");
    (img, sample)
}

/// Rig and a rendered non-planar scene at the benchmark resolution.
pub fn scene_pair(seed: u64) -> (CameraRig, ScenePair) {
    let rig = CameraRig::default_pair(Size::new(192, 128)).expect("rig");
    let scene = SynthScene::random(rig, SceneKind::NonPlanar, [0.25, 0.0, 0.0], seed);
    (rig, render_scene(&scene).expect("render"))
}

/// Inputs for one fusion forward pass over a frame of `size`.
pub struct FusionInputs {
    pub head: FusionHead,
    pub propagated: ScoreMap,
    pub native: ScoreMap,
    pub mask: Mask,
}

pub fn fusion_inputs(variant: &str, size: Size, seed: u64) -> FusionInputs {
    let v = FusionVariant::from_name(variant, NUM_CLASSES).expect("variant");
    let head = FusionHead::random(v, NUM_CLASSES, 1.0, seed).expect("head");
    let planes = |offset: u64| {
        let data = (0..size.area() * NUM_CLASSES)
            .map(|i| (((i as u64 * 2654435761 + offset) % 1000) as f32) / 250.0 - 2.0)
            .collect();
        ScoreMap::new(size, NUM_CLASSES, data).expect("scores")
    };
    FusionInputs { head, propagated: planes(seed), native: planes(seed + 17), mask: Mask::full(size) }
}
