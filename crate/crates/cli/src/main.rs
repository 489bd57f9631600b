//! `semshare`: command-line driver for the dual-camera semantic sharing
//! engine.

mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semshare::flow::{estimate_flow, flow_to_color};
use semshare::fusion::{train_fusion, FusionHead, FusionSample, FusionVariant, TrainConfig};
use semshare::metrics::{aepe, ConfusionMatrix};
use semshare::pipeline::{
    gen_benchmark, load_benchmark, run_ablation, run_frame, share_backward, share_forward, AblationOptions,
    AblationSuite, BenchSpec, FrameInputs, PipelineConfig, Split,
};
use semshare::raster::{read_flo, write_flo, write_ppm};
use semshare::synth::{SceneKind, NUM_CLASSES};
use semshare::{Error, ErrorClass, FlowConfig, Mask, Result, Size};

#[derive(Parser, Debug)]
#[command(name = "semshare", version, about = "Semantic sharing between a narrow and a wide camera")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic benchmark into a directory.
    GenBench(GenBenchArgs),
    /// Estimate backward optical flow between two images and write a .flo file.
    Flow(FlowArgs),
    /// Carry scores between the two camera frames.
    Share(ShareArgs),
    /// Train a fusion head on the benchmark's training split.
    TrainFusion(TrainArgs),
    /// Run the full two-branch loop on one frame.
    Run(RunArgs),
    /// Run a named ablation suite over the benchmark.
    Ablate(AblateArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct FlowOpts {
    #[arg(default_value_t = FlowConfig::default().num_levels)]
    flow_levels: usize,
    #[arg(default_value_t = FlowConfig::default().iterations_per_level)]
    flow_iterations: usize,
    /// Smoothness weight of the flow energy.
    #[arg(default_value_t = FlowConfig::default().smoothness_weight)]
    flow_alpha: f64,
    #[arg(default_value_t = FlowConfig::default().warps_per_level)]
    flow_warps: usize,
}

impl FlowOpts {
    fn config(&self) -> FlowConfig {
        FlowConfig {
            num_levels: self.flow_levels,
            iterations_per_level: self.flow_iterations,
            smoothness_weight: self.flow_alpha,
            warps_per_level: self.flow_warps,
            ..FlowConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct GenBenchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = BenchSpec::default().train_frames)]
    train: usize,
    #[arg(long, default_value_t = BenchSpec::default().test_frames)]
    test: usize,
    #[arg(long, default_value_t = BenchSpec::default().planar_frames)]
    planar: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Frame the flow is defined on.
    #[arg(long)]
    target: PathBuf,
    /// Frame sampled at `p + flow(p)`.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a color-coded view of the flow.
    #[arg(long)]
    color: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowOpts,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

#[derive(Args, Debug)]
struct ShareArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    wide_img: PathBuf,
    #[arg(long)]
    narrow_img: PathBuf,
    /// Wide scores for `forward`, narrow scores for `backward`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_enum, default_value_t = Direction::Forward)]
    direction: Direction,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the validity mask; defaults next to `--out`.
    #[arg(long)]
    mask_out: Option<PathBuf>,
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowOpts,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Basic,
    Residual,
    Bottleneck,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Residual => "residual",
            Variant::Bottleneck => "bottleneck",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Narrow,
    Wide,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, value_enum, default_value_t = Variant::Bottleneck)]
    variant: Variant,
    #[arg(long, value_enum, default_value_t = Branch::Narrow)]
    branch: Branch,
    /// Trained narrow head; required for `--branch wide`.
    #[arg(long)]
    narrow_head: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::benchmark().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::benchmark().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = TrainConfig::benchmark().subsample)]
    subsample: f64,
    #[arg(long, default_value_t = TrainConfig::benchmark().init_scale)]
    init_scale: f64,
    /// Write the per-step loss curve here.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowOpts,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    wide_img: PathBuf,
    #[arg(long)]
    narrow_img: PathBuf,
    #[arg(long)]
    wide_scores: PathBuf,
    #[arg(long)]
    narrow_scores: PathBuf,
    /// Narrow-branch head; fusion is skipped (native scores kept) without it.
    #[arg(long)]
    narrow_head: Option<PathBuf>,
    #[arg(long)]
    wide_head: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_intermediates: bool,
    #[command(flatten)]
    flow: FlowOpts,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// flow, fusion, flow-quality or overlap.
    suite: String,
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, value_enum, default_value_t = Variant::Bottleneck)]
    variant: Variant,
    /// Report only the overlap-region rows of the overlap suite.
    #[arg(long)]
    overlap_only: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowOpts,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Labels or scores.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Evaluate only inside this mask (e.g. the overlap region).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    flow_gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => files::save(p, |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_bench(a: &GenBenchArgs) -> Result<()> {
    let size = Size::new(a.width, a.height);
    let spec = BenchSpec {
        seed: a.seed,
        size_wide: size,
        size_narrow: size,
        train_frames: a.train,
        test_frames: a.test,
        planar_frames: a.planar,
        ..BenchSpec::default()
    };
    let bench = gen_benchmark(&a.out, &spec)?;
    println!("wrote {} frames to {}", bench.frames.len(), a.out.display());
    Ok(())
}

fn flow(a: &FlowArgs) -> Result<()> {
    let (t, s) = (files::load_image(&a.target)?, files::load_image(&a.source)?);
    let f = estimate_flow(&t, &s, &a.flow.config())?;
    files::save(&a.out, |b| write_flo(b, &f))?;
    if let Some(c) = &a.color {
        files::save(c, |b| write_ppm(b, &flow_to_color(&f)))?;
    }
    Ok(())
}

fn share(a: &ShareArgs) -> Result<()> {
    let rig = files::load_rig(&a.rig)?;
    let (wide, narrow) = (files::load_image(&a.wide_img)?, files::load_image(&a.narrow_img)?);
    let scores = files::load_scores(&a.scores)?;
    let cfg = a.flow.config();
    let shared = match a.direction {
        Direction::Forward => share_forward(&rig, &scores, &wide, &narrow, &cfg)?,
        Direction::Backward => share_backward(&rig, &scores, &wide, &narrow, &cfg)?,
    };
    files::save_scores(&a.out, &shared.scores)?;
    let mask_path = a.mask_out.clone().unwrap_or_else(|| a.out.with_extension("mask.sem"));
    files::save_mask(&mask_path, &shared.mask)?;
    if let Some(dir) = &a.dump_intermediates {
        let w = &shared.warp;
        files::save(&dir.join("stage1.pgm"), |b| semshare::raster::write_pgm(b, &w.stage1_image))?;
        files::save_mask(&dir.join("stage1_mask.sem"), &w.stage1_mask)?;
        files::save(&dir.join("flow.flo"), |b| write_flo(b, &w.flow))?;
        files::save(&dir.join("flow.ppm"), |b| write_ppm(b, &flow_to_color(&w.flow)))?;
        files::save_mask(&dir.join("composed_mask.sem"), &w.composed.mask())?;
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let bench = load_benchmark(&a.bench)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        iterations: a.iterations,
        subsample: a.subsample,
        seed: a.seed,
        init_scale: a.init_scale,
    };
    cfg.validate()?;
    let flow = a.flow.config();
    let narrow_head = match (a.branch, &a.narrow_head) {
        (Branch::Wide, Some(p)) => Some(files::load_head(p)?),
        (Branch::Wide, None) => return Err(Error::Config("--branch wide needs --narrow-head".into())),
        (Branch::Narrow, _) => None,
    };
    let mut samples = Vec::new();
    for f in bench.frames.iter().filter(|f| f.split == Split::Train && f.kind == SceneKind::NonPlanar) {
        let fwd = share_forward(&bench.rig, &f.wide_scores, &f.wide_img, &f.narrow_img, &flow)?;
        samples.push(match &narrow_head {
            None => FusionSample { propagated: fwd.scores, native: f.narrow_scores.clone(), mask: fwd.mask, gt: f.narrow_gt.clone() },
            Some(h) => {
                let fused = semshare::fuse_forward(h, &fwd.scores, &f.narrow_scores, &fwd.mask)?;
                let back = share_backward(&bench.rig, &fused, &f.wide_img, &f.narrow_img, &flow)?;
                FusionSample { propagated: back.scores, native: f.wide_scores.clone(), mask: back.mask, gt: f.wide_gt.clone() }
            }
        });
    }
    let variant = FusionVariant::from_name(a.variant.name(), NUM_CLASSES)?;
    let init = FusionHead::random(variant, NUM_CLASSES, cfg.init_scale, cfg.seed)?;
    let outcome = train_fusion(&init, &samples, &cfg)?;
    outcome.head.save(&a.out)?;
    if let Some(p) = &a.losses {
        let text: String = outcome.losses.iter().enumerate().map(|(i, l)| format!("{i}\t{l}\n")).collect();
        emit(&text, Some(p))?;
    }
    let (first, last) = (outcome.losses[0], outcome.losses[outcome.losses.len() - 1]);
    println!("trained {} head: loss {first:.6} -> {last:.6}", a.variant.name());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let rig = files::load_rig(&a.rig)?;
    let head = |p: &Option<PathBuf>| match p {
        Some(p) => files::load_head(p),
        None => FusionHead::native_identity(NUM_CLASSES),
    };
    let cfg = PipelineConfig {
        rig,
        flow: a.flow.config(),
        narrow_head: head(&a.narrow_head)?,
        wide_head: head(&a.wide_head)?,
        keep_intermediates: a.dump_intermediates,
    };
    let inputs = FrameInputs {
        wide_img: files::load_image(&a.wide_img)?,
        wide_scores: files::load_scores(&a.wide_scores)?,
        narrow_img: files::load_image(&a.narrow_img)?,
        narrow_scores: files::load_scores(&a.narrow_scores)?,
    };
    run_frame(&cfg, &inputs)?.write_dir(&a.out)
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let suite = AblationSuite::from_name(&a.suite)?;
    let bench = load_benchmark(&a.bench)?;
    let opts = AblationOptions {
        flow: a.flow.config(),
        train: TrainConfig { seed: a.seed, ..TrainConfig::benchmark() },
        variant: a.variant.name(),
        overlap_only: a.overlap_only,
        ..AblationOptions::default()
    };
    let table = run_ablation(suite, &bench, &opts)?;
    emit(&table.to_text(), a.out.as_deref())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let pred = files::load_labels_or_scores(&a.pred)?;
    let gt = files::load_labels_or_scores(&a.gt)?;
    let mask = match &a.mask {
        Some(p) => files::load_mask(p)?,
        None => Mask::full(gt.size()),
    };
    let classes = pred.classes().max(gt.classes());
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(&pred, &gt, &mask)?;
    let mut report = cm.report()?;
    match (&a.flow, &a.flow_gt) {
        (Some(e), Some(g)) => {
            let est = read_flo(std::fs::read(e)?.as_slice())?;
            let gtf = read_flo(std::fs::read(g)?.as_slice())?;
            let full = Mask::full(gtf.size());
            report.aepe = Some((aepe(&gtf, &est, &full)?, full.count()));
        }
        (None, None) => {}
        _ => return Err(Error::Config("--flow and --flow-gt go together".into())),
    }
    emit(&report.to_metric_lines(), a.out.as_deref())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenBench(a) => gen_bench(a),
        Command::Flow(a) => flow(a),
        Command::Share(a) => share(a),
        Command::TrainFusion(a) => train(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semshare: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
