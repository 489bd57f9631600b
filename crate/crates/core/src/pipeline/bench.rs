//! The synthetic benchmark: rendered frame pairs with ground truth and
//! degraded per-camera scores, stored as a directory tree.
//!
//! ```text
//! <dir>/manifest.txt      key = value; one `frame = name=.. split=.. kind=.. seed=..` per frame
//! <dir>/rig.txt           calibration
//! <dir>/<frame>/scene.txt wide.pgm narrow.pgm wide_gt.sem narrow_gt.sem
//!               wide_scores.sem narrow_scores.sem overlap.sem narrow_overlap.sem
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraRig, Intrinsics, Rotation3};
use crate::error::{Error, Result};
use crate::kv::{parse_attrs, parse_value, KvDoc};
use crate::raster::{
    read_labels, read_mask, read_pnm, read_scores, write_labels, write_mask, write_pgm, write_scores, Image,
    LabelMap, Mask, ScoreMap, Size,
};
use crate::synth::{degrade_scores, render_scene, DegradeSpec, SceneKind, ScenePair, SynthScene};

const MANIFEST: &str = "manifest.txt";
const FORMAT_TAG: &str = "semshare-bench";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn kind_name(k: SceneKind) -> &'static str {
    match k {
        SceneKind::Planar => "planar",
        SceneKind::NonPlanar => "nonplanar",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub seed: u64,
    pub size_wide: Size,
    pub size_narrow: Size,
    pub baseline: [f64; 3],
    /// Non-planar training frames.
    pub train_frames: usize,
    /// Non-planar test frames.
    pub test_frames: usize,
    /// Planar test frames.
    pub planar_frames: usize,
    pub wide_degrade: DegradeSpec,
    /// Lighter than the wide branch: the narrow camera resolves distant
    /// content more clearly.
    pub narrow_degrade: DegradeSpec,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size_wide: Size::new(192, 128),
            size_narrow: Size::new(192, 128),
            baseline: [0.25, 0.0, 0.0],
            train_frames: 12,
            test_frames: 20,
            planar_frames: 4,
            wide_degrade: DegradeSpec { margin: 1.0, sigma: 0.5, blur_radius: 2 },
            narrow_degrade: DegradeSpec { margin: 1.0, sigma: 0.35, blur_radius: 1 },
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_frames + self.test_frames + self.planar_frames == 0 {
            return Err(Error::config("benchmark needs at least one frame"));
        }
        self.wide_degrade.validate()?;
        self.narrow_degrade.validate()
    }
}

#[derive(Debug, Clone)]
pub struct BenchFrame {
    pub name: String,
    pub split: Split,
    pub kind: SceneKind,
    pub seed: u64,
    pub scene: SynthScene,
    pub wide_img: Image,
    pub narrow_img: Image,
    pub wide_gt: LabelMap,
    pub narrow_gt: LabelMap,
    pub wide_scores: ScoreMap,
    pub narrow_scores: ScoreMap,
    /// Wide pixels also seen by the narrow camera.
    pub overlap: Mask,
    pub narrow_overlap: Mask,
}

impl BenchFrame {
    /// Re-renders the scene for its exact correspondence grids.
    pub fn ground_truth(&self) -> Result<ScenePair> {
        render_scene(&self.scene)
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub dir: PathBuf,
    pub rig: CameraRig,
    pub seed: u64,
    pub frames: Vec<BenchFrame>,
}

impl Benchmark {
    pub fn frames_where(&self, split: Split, kind: SceneKind) -> impl Iterator<Item = &BenchFrame> {
        self.frames.iter().filter(move |f| f.split == split && f.kind == kind)
    }
}

fn degrade_line(d: &DegradeSpec) -> String {
    format!("{} {} {}", d.margin, d.sigma, d.blur_radius)
}

fn save(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Renders and writes the benchmark, then loads it back so the returned
/// frames are exactly what later runs will read.
pub fn gen_benchmark(dir: &Path, spec: &BenchSpec) -> Result<Benchmark> {
    spec.validate()?;
    let rig = CameraRig::new(
        Intrinsics::from_hfov(spec.size_narrow, 60.0)?,
        Intrinsics::from_hfov(spec.size_wide, 120.0)?,
        Rotation3::identity(),
        spec.size_narrow,
        spec.size_wide,
    )?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rig.txt"), rig.to_text())?;
    let mut manifest = KvDoc::new();
    manifest.push("format", FORMAT_TAG);
    manifest.push("version", 1);
    manifest.push("seed", spec.seed);
    let b = spec.baseline;
    manifest.push("baseline", format!("{} {} {}", b[0], b[1], b[2]));
    manifest.push("wide_degrade", degrade_line(&spec.wide_degrade));
    manifest.push("narrow_degrade", degrade_line(&spec.narrow_degrade));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan = std::iter::repeat_n((Split::Train, SceneKind::NonPlanar), spec.train_frames)
        .chain(std::iter::repeat_n((Split::Test, SceneKind::NonPlanar), spec.test_frames))
        .chain(std::iter::repeat_n((Split::Test, SceneKind::Planar), spec.planar_frames));
    for (k, (split, kind)) in plan.enumerate() {
        let seed: u64 = rng.random();
        let name = format!("f{k:03}");
        let scene = SynthScene::random(rig, kind, spec.baseline, seed);
        let pair = render_scene(&scene)?;
        let wide_scores = degrade_scores(&pair.wide_labels, &spec.wide_degrade, seed ^ 0x5717_de00)?;
        let narrow_scores = degrade_scores(&pair.narrow_labels, &spec.narrow_degrade, seed ^ 0x0060_de00)?;
        let fdir = dir.join(&name);
        fs::create_dir_all(&fdir)?;
        fs::write(fdir.join("scene.txt"), scene.to_text())?;
        save(&fdir.join("wide.pgm"), |w| write_pgm(w, &pair.wide_image))?;
        save(&fdir.join("narrow.pgm"), |w| write_pgm(w, &pair.narrow_image))?;
        save(&fdir.join("wide_gt.sem"), |w| write_labels(w, &pair.wide_labels))?;
        save(&fdir.join("narrow_gt.sem"), |w| write_labels(w, &pair.narrow_labels))?;
        save(&fdir.join("wide_scores.sem"), |w| write_scores(w, &wide_scores))?;
        save(&fdir.join("narrow_scores.sem"), |w| write_scores(w, &narrow_scores))?;
        save(&fdir.join("overlap.sem"), |w| write_mask(w, &pair.overlap))?;
        save(&fdir.join("narrow_overlap.sem"), |w| write_mask(w, &pair.narrow_overlap))?;
        manifest.push(
            "frame",
            format!("name={name} split={} kind={} seed={seed}", split.name(), kind_name(kind)),
        );
    }
    fs::write(dir.join(MANIFEST), manifest.to_text())?;
    load_benchmark(dir)
}

fn read_file<T>(path: &Path, f: impl for<'b> FnOnce(&'b [u8]) -> Result<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::format("benchmark", format!("{}: {e}", path.display())))?;
    f(&bytes)
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    const WHAT: &str = "benchmark manifest";
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::config(format!("no benchmark at {}: {e}", dir.display())))?;
    let doc = KvDoc::parse(&text, WHAT)?;
    if doc.get("format") != Some(FORMAT_TAG) {
        return Err(Error::config(format!("{} is not a benchmark manifest", manifest_path.display())));
    }
    let rig_text = fs::read_to_string(dir.join("rig.txt"))
        .map_err(|e| Error::config(format!("benchmark rig missing: {e}")))?;
    let rig = CameraRig::parse(&rig_text)?;
    let seed = doc.require("seed", WHAT)?;
    let mut frames = Vec::new();
    for raw in doc.get_all("frame") {
        let attrs = parse_attrs(raw, WHAT)?;
        let get = |k: &str| {
            attrs
                .iter()
                .find(|(a, _)| a == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format(WHAT, format!("frame entry missing `{k}`")))
        };
        let name = get("name")?.to_string();
        let split = match get("split")? {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(Error::format(WHAT, format!("unknown split `{s}`"))),
        };
        let kind = match get("kind")? {
            "planar" => SceneKind::Planar,
            "nonplanar" => SceneKind::NonPlanar,
            s => return Err(Error::format(WHAT, format!("unknown scene kind `{s}`"))),
        };
        let fseed = parse_value(get("seed")?, "seed", WHAT)?;
        let fdir = dir.join(&name);
        let scene_text = read_file(&fdir.join("scene.txt"), |b| {
            String::from_utf8(b.to_vec()).map_err(|_| Error::format("scene", "not UTF-8"))
        })?;
        let frame = BenchFrame {
            split,
            kind,
            seed: fseed,
            scene: SynthScene::parse(&scene_text)?,
            wide_img: read_file(&fdir.join("wide.pgm"), |b| read_pnm(b))?,
            narrow_img: read_file(&fdir.join("narrow.pgm"), |b| read_pnm(b))?,
            wide_gt: read_file(&fdir.join("wide_gt.sem"), |b| read_labels(b))?,
            narrow_gt: read_file(&fdir.join("narrow_gt.sem"), |b| read_labels(b))?,
            wide_scores: read_file(&fdir.join("wide_scores.sem"), |b| read_scores(b))?,
            narrow_scores: read_file(&fdir.join("narrow_scores.sem"), |b| read_scores(b))?,
            overlap: read_file(&fdir.join("overlap.sem"), |b| read_mask(b))?,
            narrow_overlap: read_file(&fdir.join("narrow_overlap.sem"), |b| read_mask(b))?,
            name,
        };
        check_frame(&rig, &frame)?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::config("benchmark manifest lists no frames"));
    }
    Ok(Benchmark { dir: dir.to_path_buf(), rig, seed, frames })
}

fn check_frame(rig: &CameraRig, f: &BenchFrame) -> Result<()> {
    let wide = [f.wide_img.size(), f.wide_gt.size(), f.wide_scores.size(), f.overlap.size()];
    let narrow = [f.narrow_img.size(), f.narrow_gt.size(), f.narrow_scores.size(), f.narrow_overlap.size()];
    if wide.iter().any(|s| *s != rig.size_wide) || narrow.iter().any(|s| *s != rig.size_narrow) {
        return Err(Error::dim(format!("frame {}: raster sizes disagree with the rig", f.name)));
    }
    if f.wide_scores.classes() != f.narrow_scores.classes() {
        return Err(Error::dim(format!("frame {}: branches disagree on the class count", f.name)));
    }
    Ok(())
}
