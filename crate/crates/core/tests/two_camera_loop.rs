use semshare::flow::homography_map;
use semshare::metrics::miou;
use semshare::pipeline::{run_frame, share_forward, FrameInputs, PipelineConfig};
use semshare::raster::{warp_labels, warp_scores, SCORE_FILL};
use semshare::synth::{degrade_scores, render_scene, DegradeSpec, SceneKind, SynthScene, NUM_CLASSES};
use semshare::{CameraRig, FlowConfig, FusionHead, ScoreMap, Size};

fn rig() -> CameraRig {
    CameraRig::default_pair(Size::new(160, 112)).unwrap()
}

#[test]
fn clean_scores_survive_the_forward_share() {
    let rig = rig();
    let scene = SynthScene::random(rig, SceneKind::NonPlanar, [0.25, 0.0, 0.0], 11);
    let pair = render_scene(&scene).unwrap();
    let wide = ScoreMap::one_hot(&pair.wide_labels, 1.0);
    let shared = share_forward(&rig, &wide, &pair.wide_image, &pair.narrow_image, &FlowConfig::default()).unwrap();
    let valid = shared.mask.and(&pair.narrow_overlap).unwrap();
    let two_stage = miou(&shared.scores.argmax(), &pair.narrow_labels, &valid, NUM_CLASSES).unwrap().mean_iou;

    let (h_scores, h_mask) = warp_scores(&wide, &homography_map(&rig).unwrap(), SCORE_FILL).unwrap();
    let h_valid = h_mask.and(&valid).unwrap();
    let homography_only = miou(&h_scores.argmax(), &pair.narrow_labels, &h_valid, NUM_CLASSES).unwrap().mean_iou;
    assert!(two_stage > 0.85, "two-stage {two_stage}");
    assert!(two_stage > homography_only, "two-stage {two_stage} vs homography {homography_only}");
}

fn agreement(a: &semshare::LabelMap, b: &semshare::LabelMap, mask: &semshare::Mask) -> f64 {
    let hits = (0..mask.data().len()).filter(|&i| mask.data()[i] && a.data()[i] == b.data()[i]).count();
    hits as f64 / mask.count() as f64
}

#[test]
fn ground_truth_grid_beats_the_homography() {
    let rig = rig();
    let scene = SynthScene::random(rig, SceneKind::NonPlanar, [0.25, 0.0, 0.0], 4);
    let pair = render_scene(&scene).unwrap();
    let (exact, mask) = warp_labels(&pair.wide_labels, &pair.grid_into_narrow).unwrap();
    let (approx, h_mask) = warp_labels(&pair.wide_labels, &homography_map(&rig).unwrap()).unwrap();
    let both = mask.and(&h_mask).unwrap();
    let (e, h) = (agreement(&exact, &pair.narrow_labels, &both), agreement(&approx, &pair.narrow_labels, &both));
    assert!(e > 0.97, "{e}");
    assert!(e > h, "{e} vs {h}");
}

#[test]
fn identity_heads_leave_degraded_frames_unchanged() {
    let rig = rig();
    let scene = SynthScene::random(rig, SceneKind::NonPlanar, [0.25, 0.0, 0.0], 8);
    let pair = render_scene(&scene).unwrap();
    let spec = DegradeSpec { margin: 1.0, sigma: 0.5, blur_radius: 1 };
    let inputs = FrameInputs {
        wide_img: pair.wide_image.clone(),
        wide_scores: degrade_scores(&pair.wide_labels, &spec, 1).unwrap(),
        narrow_img: pair.narrow_image.clone(),
        narrow_scores: degrade_scores(&pair.narrow_labels, &spec, 2).unwrap(),
    };
    let cfg = PipelineConfig {
        rig,
        flow: FlowConfig::default(),
        narrow_head: FusionHead::native_identity(NUM_CLASSES).unwrap(),
        wide_head: FusionHead::native_identity(NUM_CLASSES).unwrap(),
        keep_intermediates: false,
    };
    let out = run_frame(&cfg, &inputs).unwrap();
    assert_eq!(out.narrow_scores, inputs.narrow_scores);
    assert_eq!(out.wide_scores, inputs.wide_scores);
    assert!(out.intermediates.is_none());
}
