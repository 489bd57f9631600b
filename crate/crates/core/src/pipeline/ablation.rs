//! Named ablation suites over the synthetic benchmark.

use std::fmt::Write as _;

use super::bench::{BenchFrame, Benchmark, Split};
use super::{run_frame, share_backward, share_forward, share_forward_homography, FrameInputs, PipelineConfig};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow_traced, homography_map, two_stage_warp, FlowConfig};
use crate::fusion::{fuse_forward, train_fusion, FusionHead, FusionSample, FusionVariant, TrainConfig};
use crate::metrics::{aepe, unsupervised_loss, ConfusionMatrix, EvalReport, LossWeights};
use crate::raster::{
    compose_grids, grid_from_flow, warp_image, FlowField, GridMap, LabelMap, Mask, ScoreMap, Size, IMAGE_FILL,
};
use crate::synth::{gen_flow_sample, textured_frame, RandomTransformSpec, SceneClass, SceneKind, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSuite {
    /// Homography alone vs homography + flow, on propagated ground truth.
    Flow,
    /// Propagated-only vs the three trained fusion heads.
    Fusion,
    /// Estimator settings on simulated transforms and on real pairs.
    FlowQuality,
    /// Native wide branch vs the refined wide branch after the full loop.
    Overlap,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 4] =
        [AblationSuite::Flow, AblationSuite::Fusion, AblationSuite::FlowQuality, AblationSuite::Overlap];

    pub fn name(self) -> &'static str {
        match self {
            AblationSuite::Flow => "flow",
            AblationSuite::Fusion => "fusion",
            AblationSuite::FlowQuality => "flow-quality",
            AblationSuite::Overlap => "overlap",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation suite `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub flow: FlowConfig,
    pub train: TrainConfig,
    /// Head used by both branches in the overlap suite.
    pub variant: &'static str,
    /// Overlap suite: report only the overlap-region rows.
    pub overlap_only: bool,
    /// Samples used by the simulated half of the flow-quality suite.
    pub flow_samples: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            train: TrainConfig::benchmark(),
            variant: "bottleneck",
            overlap_only: false,
            flow_samples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    /// Aligned with the table's columns; `None` where a value is undefined.
    pub values: Vec<Option<f64>>,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub suite: String,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// `(label, value)`, e.g. `("P.T. + Flow - P.T.", 0.12)` on the first column.
    pub deltas: Vec<(String, f64)>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// First-column value of a row.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.row(name).and_then(|r| r.values.first().copied().flatten())
    }

    pub fn delta(&self, label: &str) -> Option<f64> {
        self.deltas.iter().find(|(l, _)| l == label).map(|(_, v)| *v)
    }

    /// Tab-separated text; stable across runs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# suite\t{}", self.suite);
        let _ = writeln!(out, "config\t{}\tpixels", self.columns.join("\t"));
        for r in &self.rows {
            let vals: Vec<String> =
                r.values.iter().map(|v| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))).collect();
            let _ = writeln!(out, "{}\t{}\t{}", r.name, vals.join("\t"), r.pixels);
        }
        let _ = writeln!(out, "# deltas");
        for (l, v) in &self.deltas {
            let _ = writeln!(out, "{l}\t{v:+.6}");
        }
        out
    }
}

fn miou_columns() -> Vec<String> {
    let mut cols = vec!["miou".to_string()];
    for c in 0..NUM_CLASSES {
        cols.push(class_name(c).to_string());
    }
    cols
}

fn class_name(c: usize) -> &'static str {
    [
        SceneClass::Background,
        SceneClass::Road,
        SceneClass::Person,
        SceneClass::Car,
        SceneClass::Barrier,
        SceneClass::Cycle,
    ][c]
        .name()
}

/// Dataset-level confusion accumulated over frames.
struct Tally(ConfusionMatrix);

impl Tally {
    fn new() -> Self {
        Tally(ConfusionMatrix::new(NUM_CLASSES))
    }

    fn add(&mut self, pred: &LabelMap, gt: &LabelMap, mask: &Mask) -> Result<()> {
        self.0.accumulate(pred, gt, mask)
    }

    fn row(&self, name: &str) -> Result<AblationRow> {
        let r: EvalReport = self.0.report()?;
        let mut values = vec![Some(r.mean_iou)];
        values.extend(r.per_class_iou.iter().copied());
        Ok(AblationRow { name: name.to_string(), values, pixels: r.pixels })
    }
}

fn delta(table: &AblationTable, a: &str, b: &str) -> Option<(String, f64)> {
    Some((format!("{a} - {b}"), table.value(a)? - table.value(b)?))
}

fn with_deltas(mut t: AblationTable, pairs: &[(&str, &str)]) -> AblationTable {
    t.deltas = pairs.iter().filter_map(|(a, b)| delta(&t, a, b)).collect();
    t
}

fn require<'a>(frames: Vec<&'a BenchFrame>, what: &str) -> Result<Vec<&'a BenchFrame>> {
    if frames.is_empty() {
        return Err(Error::config(format!("benchmark has no {what} frames")));
    }
    Ok(frames)
}

pub fn run_ablation(suite: AblationSuite, bench: &Benchmark, opts: &AblationOptions) -> Result<AblationTable> {
    opts.flow.validate()?;
    opts.train.validate()?;
    match suite {
        AblationSuite::Flow => flow_suite(bench, opts),
        AblationSuite::Fusion => fusion_suite(bench, opts),
        AblationSuite::FlowQuality => flow_quality_suite(bench, opts),
        AblationSuite::Overlap => overlap_suite(bench, opts),
    }
}

fn grid_epe(est: &GridMap, gt: &GridMap, mask: &Mask) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..est.size().area() {
        if mask.data()[i] && est.valid()[i] && gt.valid()[i] {
            let (a, b) = (est.coords()[i], gt.coords()[i]);
            sum += (a[0] - b[0]).hypot(a[1] - b[1]);
            n += 1;
        }
    }
    (sum, n)
}

fn flow_suite(bench: &Benchmark, opts: &AblationOptions) -> Result<AblationTable> {
    let rig = &bench.rig;
    let mut table = AblationTable {
        suite: "flow".into(),
        columns: miou_columns(),
        rows: Vec::new(),
        deltas: Vec::new(),
    };
    table.columns.push("grid_epe".into());
    let mut any = false;
    for (kind, suffix) in [(SceneKind::NonPlanar, ""), (SceneKind::Planar, " (planar)")] {
        let frames: Vec<_> = bench.frames_where(Split::Test, kind).collect();
        if frames.is_empty() {
            continue;
        }
        any = true;
        let (mut pt, mut ptf) = (Tally::new(), Tally::new());
        let (mut e_pt, mut e_ptf) = ((0.0, 0usize), (0.0, 0usize));
        for f in frames {
            let gt_scores = ScoreMap::one_hot(&f.wide_gt, 1.0);
            let (h_scores, h_mask, h_grid) = share_forward_homography(rig, &gt_scores)?;
            let shared = share_forward(rig, &gt_scores, &f.wide_img, &f.narrow_img, &opts.flow)?;
            let mask = h_mask.and(&shared.mask)?;
            pt.add(&h_scores.argmax(), &f.narrow_gt, &mask)?;
            ptf.add(&shared.scores.argmax(), &f.narrow_gt, &mask)?;
            let truth = f.ground_truth()?.grid_into_narrow;
            for (acc, g) in [(&mut e_pt, &h_grid), (&mut e_ptf, &shared.warp.composed)] {
                let (s, n) = grid_epe(g, &truth, &mask);
                acc.0 += s;
                acc.1 += n;
            }
        }
        for (tally, name, e) in [(pt, "P.T.", e_pt), (ptf, "P.T. + Flow", e_ptf)] {
            let mut row = tally.row(&format!("{name}{suffix}"))?;
            row.values.push((e.1 > 0).then(|| e.0 / e.1 as f64));
            table.rows.push(row);
        }
    }
    if !any {
        return Err(Error::config("benchmark has no test frames"));
    }
    Ok(with_deltas(table, &[("P.T. + Flow", "P.T."), ("P.T. + Flow (planar)", "P.T. (planar)")]))
}

struct Forwarded<'a> {
    frame: &'a BenchFrame,
    propagated: ScoreMap,
    mask: Mask,
}

fn forward_frames<'a>(bench: &Benchmark, frames: &[&'a BenchFrame], flow: &FlowConfig) -> Result<Vec<Forwarded<'a>>> {
    frames
        .iter()
        .map(|f| {
            let s = share_forward(&bench.rig, &f.wide_scores, &f.wide_img, &f.narrow_img, flow)?;
            Ok(Forwarded { frame: f, propagated: s.scores, mask: s.mask })
        })
        .collect()
}

fn narrow_samples(fw: &[Forwarded]) -> Vec<FusionSample> {
    fw.iter()
        .map(|x| FusionSample {
            propagated: x.propagated.clone(),
            native: x.frame.narrow_scores.clone(),
            mask: x.mask.clone(),
            gt: x.frame.narrow_gt.clone(),
        })
        .collect()
}

fn train_head(variant: FusionVariant, samples: &[FusionSample], cfg: &TrainConfig) -> Result<FusionHead> {
    let init = FusionHead::random(variant, NUM_CLASSES, cfg.init_scale, cfg.seed)?;
    Ok(train_fusion(&init, samples, cfg)?.head)
}

fn fusion_suite(bench: &Benchmark, opts: &AblationOptions) -> Result<AblationTable> {
    let train = require(bench.frames_where(Split::Train, SceneKind::NonPlanar).collect(), "training")?;
    let test = require(bench.frames_where(Split::Test, SceneKind::NonPlanar).collect(), "non-planar test")?;
    let train_fw = forward_frames(bench, &train, &opts.flow)?;
    let test_fw = forward_frames(bench, &test, &opts.flow)?;
    let samples = narrow_samples(&train_fw);

    let mut table = AblationTable { suite: "fusion".into(), columns: miou_columns(), rows: Vec::new(), deltas: Vec::new() };
    let (mut none, mut native) = (Tally::new(), Tally::new());
    for x in &test_fw {
        none.add(&x.propagated.argmax(), &x.frame.narrow_gt, &x.mask)?;
        native.add(&x.frame.narrow_scores.argmax(), &x.frame.narrow_gt, &x.mask)?;
    }
    table.rows.push(none.row("None")?);
    table.rows.push(native.row("Native only")?);
    for (name, variant) in [
        ("Basic", FusionVariant::Basic),
        ("Residual", FusionVariant::residual(NUM_CLASSES)),
        ("Bottleneck", FusionVariant::bottleneck(NUM_CLASSES)),
    ] {
        let head = train_head(variant, &samples, &opts.train)?;
        let mut t = Tally::new();
        for x in &test_fw {
            let fused = fuse_forward(&head, &x.propagated, &x.frame.narrow_scores, &x.mask)?;
            t.add(&fused.argmax(), &x.frame.narrow_gt, &x.mask)?;
        }
        table.rows.push(t.row(name)?);
    }
    Ok(with_deltas(
        table,
        &[
            ("Basic", "None"),
            ("Residual", "None"),
            ("Bottleneck", "None"),
            ("Residual", "Basic"),
            ("Bottleneck", "Basic"),
        ],
    ))
}

/// Trains the narrow head, then the wide head on back-propagated fused
/// narrow scores, both on the training split.
pub(crate) fn train_pipeline(bench: &Benchmark, opts: &AblationOptions) -> Result<PipelineConfig> {
    let variant = FusionVariant::from_name(opts.variant, NUM_CLASSES)?;
    let train = require(bench.frames_where(Split::Train, SceneKind::NonPlanar).collect(), "training")?;
    let train_fw = forward_frames(bench, &train, &opts.flow)?;
    let narrow_head = train_head(variant, &narrow_samples(&train_fw), &opts.train)?;
    let mut wide_samples = Vec::with_capacity(train_fw.len());
    for x in &train_fw {
        let f = x.frame;
        let fused = fuse_forward(&narrow_head, &x.propagated, &f.narrow_scores, &x.mask)?;
        let back = share_backward(&bench.rig, &fused, &f.wide_img, &f.narrow_img, &opts.flow)?;
        wide_samples.push(FusionSample {
            propagated: back.scores,
            native: f.wide_scores.clone(),
            mask: back.mask,
            gt: f.wide_gt.clone(),
        });
    }
    let wide_cfg = TrainConfig { seed: opts.train.seed ^ 0x120, ..opts.train };
    let wide_head = train_head(variant, &wide_samples, &wide_cfg)?;
    Ok(PipelineConfig { rig: bench.rig, flow: opts.flow, narrow_head, wide_head, keep_intermediates: false })
}

fn overlap_suite(bench: &Benchmark, opts: &AblationOptions) -> Result<AblationTable> {
    let test = require(bench.frames_where(Split::Test, SceneKind::NonPlanar).collect(), "non-planar test")?;
    let cfg = train_pipeline(bench, opts)?;
    let mut t = [Tally::new(), Tally::new(), Tally::new(), Tally::new(), Tally::new(), Tally::new()];
    for f in &test {
        let inputs = FrameInputs {
            wide_img: f.wide_img.clone(),
            wide_scores: f.wide_scores.clone(),
            narrow_img: f.narrow_img.clone(),
            narrow_scores: f.narrow_scores.clone(),
        };
        let r = run_frame(&cfg, &inputs)?;
        let full_w = Mask::full(f.wide_gt.size());
        let full_n = Mask::full(f.narrow_gt.size());
        let native_w = f.wide_scores.argmax();
        t[0].add(&native_w, &f.wide_gt, &f.overlap)?;
        t[1].add(&r.wide_labels, &f.wide_gt, &f.overlap)?;
        t[2].add(&native_w, &f.wide_gt, &full_w)?;
        t[3].add(&r.wide_labels, &f.wide_gt, &full_w)?;
        t[4].add(&f.narrow_scores.argmax(), &f.narrow_gt, &full_n)?;
        t[5].add(&r.narrow_labels, &f.narrow_gt, &full_n)?;
    }
    let names = [
        "Native wide (120-OL)",
        "Refined wide (120-OL)",
        "Native wide",
        "Refined wide",
        "Native narrow",
        "Fused narrow",
    ];
    let keep = if opts.overlap_only { 2 } else { names.len() };
    let rows = t.iter().zip(names).take(keep).map(|(t, n)| t.row(n)).collect::<Result<Vec<_>>>()?;
    let table = AblationTable { suite: "overlap".into(), columns: miou_columns(), rows, deltas: Vec::new() };
    Ok(with_deltas(
        table,
        &[
            ("Refined wide (120-OL)", "Native wide (120-OL)"),
            ("Refined wide", "Native wide"),
            ("Fused narrow", "Native narrow"),
        ],
    ))
}

fn flow_quality_suite(bench: &Benchmark, opts: &AblationOptions) -> Result<AblationTable> {
    let single = FlowConfig { num_levels: 1, ..opts.flow };
    let configs: [(&str, Option<FlowConfig>); 3] =
        [("Zero flow", None), ("HS single level", Some(single)), ("HS coarse-to-fine", Some(opts.flow))];
    let size = Size::new(128, 128);
    let samples: Vec<_> = (0..opts.flow_samples as u64)
        .map(|k| {
            let img = textured_frame(size, bench.seed.wrapping_add(7919 * k));
            gen_flow_sample(&img, &RandomTransformSpec::new(bench.seed.wrapping_add(k))).map(|s| (img, s))
        })
        .collect::<Result<_>>()?;
    let real = require(bench.frames_where(Split::Test, SceneKind::NonPlanar).collect(), "non-planar test")?;
    let stage1 = homography_map(&bench.rig)?;
    let weights = LossWeights::default();
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let (mut err, mut n) = (0.0, 0usize);
        for (img, s) in &samples {
            let est = match cfg {
                Some(c) => estimate_flow_traced(&s.warped, img, Some(&s.mask), None, &c)?.0,
                None => FlowField::zeros(size),
            };
            err += aepe(&s.flow, &est, &s.mask)? * s.mask.count() as f64;
            n += s.mask.count();
        }
        let mut parts = [0.0; 4];
        for f in &real {
            let flow = match cfg {
                Some(c) => two_stage_warp(&bench.rig, &f.wide_img, &f.narrow_img, &c)?.flow,
                None => FlowField::zeros(bench.rig.size_narrow),
            };
            let grid = compose_grids(&grid_from_flow(&flow), &stage1)?;
            let (warped, mask) = warp_image(&f.wide_img, &grid, IMAGE_FILL)?;
            let l = unsupervised_loss(&f.narrow_img, &warped, &flow, &weights, &mask)?;
            for (acc, v) in parts.iter_mut().zip([l.l1, l.ssim, l.smooth, l.total]) {
                *acc += v / real.len() as f64;
            }
        }
        let mut values = vec![Some(err / n as f64)];
        values.extend(parts.map(Some));
        rows.push(AblationRow { name: name.into(), values, pixels: n });
    }
    let table = AblationTable {
        suite: "flow-quality".into(),
        columns: ["aepe_simulated", "l1_real", "ssim_loss_real", "smoothness_real", "total_loss_real"]
            .map(String::from)
            .to_vec(),
        rows,
        deltas: Vec::new(),
    };
    Ok(with_deltas(table, &[("HS coarse-to-fine", "Zero flow"), ("HS coarse-to-fine", "HS single level")]))
}
