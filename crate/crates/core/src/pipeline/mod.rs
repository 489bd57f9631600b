//! The closed loop between the two branches: wide scores are carried into the
//! narrow frame and fused with the narrow branch's own scores, the fused
//! result is carried back into the wide frame and fused again there.

mod ablation;
mod bench;

pub use ablation::{run_ablation, AblationOptions, AblationRow, AblationSuite, AblationTable};
pub use bench::{gen_benchmark, load_benchmark, BenchFrame, BenchSpec, Benchmark, Split};

use std::fs;
use std::path::Path;

use crate::camera::CameraRig;
use crate::error::{Error, Result, Stage};
use crate::flow::{flow_to_color, homography_map, two_stage_warp, FlowConfig, TwoStageWarp};
use crate::fusion::{fuse_forward, FusionHead};
use crate::raster::{
    same_size, warp_scores, write_flo, write_labels, write_mask, write_pgm, write_ppm, write_scores,
    GridMap, Image, LabelMap, Mask, ScoreMap, SCORE_FILL,
};

/// Scores carried from one camera's frame into the other's.
#[derive(Debug, Clone)]
pub struct Shared {
    pub scores: ScoreMap,
    /// Target pixels that received real source values.
    pub mask: Mask,
    pub warp: TwoStageWarp,
}

/// Wide-frame scores into the narrow frame through the two-stage map.
pub fn share_forward(
    rig: &CameraRig,
    wide_scores: &ScoreMap,
    wide_img: &Image,
    narrow_img: &Image,
    cfg: &FlowConfig,
) -> Result<Shared> {
    same_size("share_forward: wide scores vs rig", wide_scores.size(), rig.size_wide)?;
    let warp = two_stage_warp(rig, wide_img, narrow_img, cfg)?;
    let (scores, mask) = warp_scores(wide_scores, &warp.composed, SCORE_FILL)?;
    Ok(Shared { scores, mask, warp })
}

/// Narrow-frame scores back into the wide frame. The reverse map is
/// estimated afresh on the swapped rig rather than inverted from the forward
/// one; wide pixels outside the narrow view come out invalid.
pub fn share_backward(
    rig: &CameraRig,
    narrow_scores: &ScoreMap,
    wide_img: &Image,
    narrow_img: &Image,
    cfg: &FlowConfig,
) -> Result<Shared> {
    same_size("share_backward: narrow scores vs rig", narrow_scores.size(), rig.size_narrow)?;
    let warp = two_stage_warp(&rig.swapped(), narrow_img, wide_img, cfg)?;
    let (scores, mask) = warp_scores(narrow_scores, &warp.composed, SCORE_FILL)?;
    Ok(Shared { scores, mask, warp })
}

/// Stage I alone in the forward direction; the fixed-geometry baseline.
pub fn share_forward_homography(rig: &CameraRig, wide_scores: &ScoreMap) -> Result<(ScoreMap, Mask, GridMap)> {
    same_size("share_forward: wide scores vs rig", wide_scores.size(), rig.size_wide)?;
    let grid = homography_map(rig)?;
    let (scores, mask) = warp_scores(wide_scores, &grid, SCORE_FILL)?;
    Ok((scores, mask, grid))
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub rig: CameraRig,
    pub flow: FlowConfig,
    pub narrow_head: FusionHead,
    pub wide_head: FusionHead,
    /// Keep the Stage I image, flow and composed grid of both directions.
    pub keep_intermediates: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        if self.narrow_head.classes() != self.wide_head.classes() {
            return Err(Error::config("narrow and wide fusion heads disagree on the class count"));
        }
        Ok(())
    }
}

/// One synchronized capture.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub wide_img: Image,
    pub wide_scores: ScoreMap,
    pub narrow_img: Image,
    pub narrow_scores: ScoreMap,
}

#[derive(Debug, Clone)]
pub struct Intermediates {
    pub forward: TwoStageWarp,
    pub backward: TwoStageWarp,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub narrow_scores: ScoreMap,
    pub narrow_labels: LabelMap,
    /// Narrow pixels that received propagated wide scores.
    pub narrow_mask: Mask,
    pub wide_scores: ScoreMap,
    pub wide_labels: LabelMap,
    /// Wide pixels that received back-propagated narrow scores.
    pub wide_mask: Mask,
    pub intermediates: Option<Intermediates>,
}

pub fn run_frame(cfg: &PipelineConfig, inputs: &FrameInputs) -> Result<FrameResult> {
    cfg.validate()?;
    let rig = &cfg.rig;
    same_size("run_frame: narrow scores vs rig", inputs.narrow_scores.size(), rig.size_narrow)?;
    same_size("run_frame: wide scores vs rig", inputs.wide_scores.size(), rig.size_wide)?;
    let fwd = share_forward(rig, &inputs.wide_scores, &inputs.wide_img, &inputs.narrow_img, &cfg.flow)
        .map_err(|e| e.at_stage(Stage::ShareForward))?;
    let narrow_scores = fuse_forward(&cfg.narrow_head, &fwd.scores, &inputs.narrow_scores, &fwd.mask)
        .map_err(|e| e.at_stage(Stage::FuseNarrow))?;
    let back = share_backward(rig, &narrow_scores, &inputs.wide_img, &inputs.narrow_img, &cfg.flow)
        .map_err(|e| e.at_stage(Stage::ShareBackward))?;
    let wide_scores = fuse_forward(&cfg.wide_head, &back.scores, &inputs.wide_scores, &back.mask)
        .map_err(|e| e.at_stage(Stage::FuseWide))?;
    Ok(FrameResult {
        narrow_labels: narrow_scores.argmax(),
        narrow_scores,
        narrow_mask: fwd.mask,
        wide_labels: wide_scores.argmax(),
        wide_scores,
        wide_mask: back.mask,
        intermediates: cfg.keep_intermediates.then_some(Intermediates { forward: fwd.warp, backward: back.warp }),
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

impl FrameResult {
    /// Writes every raster under `dir` with fixed file names.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("narrow_scores.sem"), |b| write_scores(b, &self.narrow_scores))?;
        write_file(&dir.join("narrow_labels.sem"), |b| write_labels(b, &self.narrow_labels))?;
        write_file(&dir.join("narrow_mask.sem"), |b| write_mask(b, &self.narrow_mask))?;
        write_file(&dir.join("wide_scores.sem"), |b| write_scores(b, &self.wide_scores))?;
        write_file(&dir.join("wide_labels.sem"), |b| write_labels(b, &self.wide_labels))?;
        write_file(&dir.join("wide_mask.sem"), |b| write_mask(b, &self.wide_mask))?;
        if let Some(im) = &self.intermediates {
            for (tag, w) in [("forward", &im.forward), ("backward", &im.backward)] {
                write_file(&dir.join(format!("{tag}_stage1.pgm")), |b| write_pgm(b, &w.stage1_image))?;
                write_file(&dir.join(format!("{tag}_stage1_mask.sem")), |b| write_mask(b, &w.stage1_mask))?;
                write_file(&dir.join(format!("{tag}_flow.flo")), |b| write_flo(b, &w.flow))?;
                write_file(&dir.join(format!("{tag}_flow.ppm")), |b| write_ppm(b, &flow_to_color(&w.flow)))?;
                write_file(&dir.join(format!("{tag}_composed_mask.sem")), |b| write_mask(b, &w.composed.mask()))?;
            }
        }
        Ok(())
    }
}
