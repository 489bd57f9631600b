//! Ray-cast dual-camera scenes with exact per-pixel correspondences.
//!
//! World frame = wide camera frame (x right, y down, z forward). The narrow
//! camera sits at `baseline` with orientation `rig.rotation_wide_to_narrow`.
//! The rig itself carries no translation; the baseline exists only here, to
//! create the depth-dependent parallax the flow stage has to absorb.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::texture::ValueNoise;
use crate::camera::{CameraRig, Intrinsics};
use crate::error::{Error, Result};
use crate::kv::{parse_attrs, KvDoc};
use crate::raster::{snap_in_bounds, GridMap, Image, LabelMap, Mask, Size};

pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SceneClass {
    Background = 0,
    Road = 1,
    Person = 2,
    Car = 3,
    Barrier = 4,
    Cycle = 5,
}

impl SceneClass {
    pub const OBJECTS: [SceneClass; 4] =
        [SceneClass::Person, SceneClass::Car, SceneClass::Barrier, SceneClass::Cycle];

    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Background => "background",
            SceneClass::Road => "road",
            SceneClass::Person => "person",
            SceneClass::Car => "car",
            SceneClass::Barrier => "barrier",
            SceneClass::Cycle => "cycle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            SceneClass::Background,
            SceneClass::Road,
            SceneClass::Person,
            SceneClass::Car,
            SceneClass::Barrier,
            SceneClass::Cycle,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }

    fn base_intensity(self) -> f64 {
        match self {
            SceneClass::Background => 0.6,
            SceneClass::Road => 0.35,
            SceneClass::Person => 0.78,
            SceneClass::Car => 0.18,
            SceneClass::Barrier => 0.88,
            SceneClass::Cycle => 0.5,
        }
    }
}

/// Fronto-parallel rectangle at a fixed depth, in world meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Billboard {
    pub class: SceneClass,
    pub depth: f64,
    pub x0: f64,
    pub x1: f64,
    /// Top edge (y grows downward).
    pub y0: f64,
    /// Bottom edge.
    pub y1: f64,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub rig: CameraRig,
    /// Narrow camera center in the world frame, meters.
    pub baseline: [f64; 3],
    /// Ground plane is `y = camera_height`.
    pub camera_height: f64,
    pub ground: bool,
    /// Ground beyond this depth is not rendered (background takes over).
    pub ground_max_depth: f64,
    pub boxes: Vec<Billboard>,
    pub texture_seed: u64,
    /// Rays per pixel side for intensity anti-aliasing.
    pub supersample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Ground plane and background only.
    Planar,
    /// Ground, background and billboard obstacles at several depths.
    NonPlanar,
}

impl SynthScene {
    pub fn new(rig: CameraRig) -> Self {
        Self {
            rig,
            baseline: [0.0; 3],
            camera_height: 1.5,
            ground: true,
            ground_max_depth: 60.0,
            boxes: Vec::new(),
            texture_seed: 0,
            supersample: 3,
        }
    }

    /// Random scene; every obstacle stands on the ground inside the narrow
    /// camera's field of view.
    pub fn random(rig: CameraRig, kind: SceneKind, baseline: [f64; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = Self::new(rig);
        scene.baseline = baseline;
        scene.texture_seed = rng.random();
        if kind == SceneKind::NonPlanar {
            let n = rng.random_range(3..=5);
            let half_fov = (rig.size_narrow.width as f64 / 2.0) / rig.cam_narrow.fx;
            for _ in 0..n {
                let class = SceneClass::OBJECTS[rng.random_range(0..4)];
                let (w, h) = match class {
                    SceneClass::Person => (rng.random_range(0.5..0.65), rng.random_range(1.6..1.85)),
                    SceneClass::Car => (rng.random_range(1.6..2.0), rng.random_range(1.3..1.6)),
                    SceneClass::Barrier => (rng.random_range(0.9..1.4), rng.random_range(0.8..1.1)),
                    _ => (rng.random_range(0.6..0.9), rng.random_range(1.1..1.4)),
                };
                let depth = rng.random_range(4.5..14.0);
                let cx = rng.random_range(-0.75..0.75) * half_fov * depth;
                scene.boxes.push(Billboard {
                    class,
                    depth,
                    x0: cx - w / 2.0,
                    x1: cx + w / 2.0,
                    y0: scene.camera_height - h,
                    y1: scene.camera_height,
                    texture_seed: rng.random(),
                });
            }
        }
        scene
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ground && self.boxes.is_empty() {
            return Err(Error::config("scene has neither ground nor obstacles"));
        }
        if !(self.camera_height > 0.0) || !(self.ground_max_depth > 0.0) {
            return Err(Error::config("camera_height and ground_max_depth must be positive"));
        }
        if self.supersample < 1 {
            return Err(Error::config("supersample must be >= 1"));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !(b.depth > 0.0) || !(b.x1 > b.x0) || !(b.y1 > b.y0) {
                return Err(Error::config(format!("box {i}: needs depth > 0 and positive extent")));
            }
            let center = Vector3::new((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0, b.depth);
            let inside = self
                .rig
                .cam_wide
                .project(&center)
                .is_some_and(|(x, y)| self.rig.size_wide.contains(x, y));
            if !inside {
                return Err(Error::config(format!("box {i} is outside the wide camera's view")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = self.rig.to_kv();
        let b = self.baseline;
        doc.push("baseline", format!("{} {} {}", b[0], b[1], b[2]));
        doc.push("camera_height", self.camera_height);
        doc.push("ground", self.ground);
        doc.push("ground_max_depth", self.ground_max_depth);
        doc.push("texture_seed", self.texture_seed);
        doc.push("supersample", self.supersample);
        for b in &self.boxes {
            doc.push(
                "box",
                format!(
                    "class={} depth={} x0={} x1={} y0={} y1={} texture={}",
                    b.class.name(),
                    b.depth,
                    b.x0,
                    b.x1,
                    b.y0,
                    b.y1,
                    b.texture_seed
                ),
            );
        }
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "scene";
        let doc = KvDoc::parse(text, WHAT)?;
        let rig = CameraRig::from_kv(&doc)?;
        let mut scene = Self::new(rig);
        if doc.get("baseline").is_some() {
            let b: Vec<f64> = doc.require_list("baseline", WHAT)?;
            if b.len() != 3 {
                return Err(Error::format(WHAT, "baseline needs 3 values"));
            }
            scene.baseline = [b[0], b[1], b[2]];
        }
        scene.camera_height = doc.get_or("camera_height", scene.camera_height, WHAT)?;
        scene.ground = doc.get_or("ground", true, WHAT)?;
        scene.ground_max_depth = doc.get_or("ground_max_depth", scene.ground_max_depth, WHAT)?;
        scene.texture_seed = doc.get_or("texture_seed", 0, WHAT)?;
        scene.supersample = doc.get_or("supersample", scene.supersample, WHAT)?;
        for raw in doc.get_all("box") {
            let attrs = parse_attrs(raw, WHAT)?;
            let get = |k: &str| {
                attrs
                    .iter()
                    .find(|(a, _)| a == k)
                    .map(|(_, v)| v.as_str())
                    .ok_or_else(|| Error::format(WHAT, format!("box missing `{k}`")))
            };
            let num = |k: &str| -> Result<f64> { crate::kv::parse_value(get(k)?, k, WHAT) };
            let class = SceneClass::from_name(get("class")?)
                .ok_or_else(|| Error::format(WHAT, format!("unknown class `{}`", get("class").unwrap_or(""))))?;
            scene.boxes.push(Billboard {
                class,
                depth: num("depth")?,
                x0: num("x0")?,
                x1: num("x1")?,
                y0: num("y0")?,
                y1: num("y1")?,
                texture_seed: crate::kv::parse_value(get("texture")?, "texture", WHAT)?,
            });
        }
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Background,
    Ground,
    Box(usize),
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    surface: Surface,
    /// Ray parameter (direction has z = 1 in the camera frame); infinite for
    /// background.
    t: f64,
    point: Vector3<f64>,
    dir: Vector3<f64>,
}

/// A camera placed in the world.
#[derive(Debug, Clone, Copy)]
struct View {
    intr: Intrinsics,
    center: Vector3<f64>,
    /// World → camera rotation.
    rot: Matrix3<f64>,
    size: Size,
}

impl View {
    fn ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        (self.center, self.rot.transpose() * self.intr.unproject(x, y))
    }

    fn project(&self, hit: &Hit) -> Option<(f64, f64)> {
        match hit.surface {
            Surface::Background => self.intr.project(&(self.rot * hit.dir)),
            _ => self.intr.project(&(self.rot * (hit.point - self.center))),
        }
    }
}

struct Tracer<'a> {
    scene: &'a SynthScene,
    ground_tex: ValueNoise,
    sky_tex: ValueNoise,
    box_tex: Vec<ValueNoise>,
}

impl<'a> Tracer<'a> {
    fn new(scene: &'a SynthScene) -> Self {
        Self {
            scene,
            ground_tex: ValueNoise::new(scene.texture_seed, 0.9, 3),
            sky_tex: ValueNoise::new(scene.texture_seed.wrapping_add(1), 0.12, 3),
            box_tex: scene.boxes.iter().map(|b| ValueNoise::new(b.texture_seed, 0.3, 3)).collect(),
        }
    }

    fn trace(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Hit {
        let mut best = Hit { surface: Surface::Background, t: f64::INFINITY, point: dir, dir };
        if self.scene.ground && dir.y > 1e-12 {
            let t = (self.scene.camera_height - origin.y) / dir.y;
            let p = origin + dir * t;
            if t > 0.0 && p.z > 0.0 && p.z <= self.scene.ground_max_depth && t < best.t {
                best = Hit { surface: Surface::Ground, t, point: p, dir };
            }
        }
        for (i, b) in self.scene.boxes.iter().enumerate() {
            if dir.z <= 1e-12 {
                continue;
            }
            let t = (b.depth - origin.z) / dir.z;
            if t <= 0.0 || t >= best.t {
                continue;
            }
            let p = origin + dir * t;
            if p.x >= b.x0 && p.x <= b.x1 && p.y >= b.y0 && p.y <= b.y1 {
                best = Hit { surface: Surface::Box(i), t, point: p, dir };
            }
        }
        best
    }

    fn class(&self, hit: &Hit) -> SceneClass {
        match hit.surface {
            Surface::Background => SceneClass::Background,
            Surface::Ground => SceneClass::Road,
            Surface::Box(i) => self.scene.boxes[i].class,
        }
    }

    fn intensity(&self, hit: &Hit) -> f64 {
        let (base, amp, n) = match hit.surface {
            Surface::Background => {
                let d = hit.dir;
                let az = d.x.atan2(d.z);
                let el = d.y.atan2(d.x.hypot(d.z));
                (SceneClass::Background.base_intensity(), 0.25, self.sky_tex.sample(az, el))
            }
            Surface::Ground => (
                SceneClass::Road.base_intensity(),
                0.2,
                self.ground_tex.sample(hit.point.x, hit.point.z),
            ),
            Surface::Box(i) => {
                let b = &self.scene.boxes[i];
                (
                    b.class.base_intensity(),
                    0.2,
                    self.box_tex[i].sample(hit.point.x - b.x0, hit.point.y - b.y0),
                )
            }
        };
        (base + amp * (2.0 * n - 1.0)).clamp(0.0, 1.0)
    }

    fn render(&self, view: &View) -> (Image, LabelMap, Vec<Hit>) {
        let ss = self.scene.supersample;
        let size = view.size;
        let mut img = Vec::with_capacity(size.area());
        let mut labels = Vec::with_capacity(size.area());
        let mut hits = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                let (o, d) = view.ray(x as f64, y as f64);
                let center = self.trace(o, d);
                labels.push(self.class(&center) as u8);
                hits.push(center);
                let mut acc = 0.0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let ox = (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / ss as f64 - 0.5;
                        let (o, d) = view.ray(x as f64 + ox, y as f64 + oy);
                        acc += self.intensity(&self.trace(o, d));
                    }
                }
                img.push((acc / (ss * ss) as f64) as f32);
            }
        }
        (
            Image::new(size, 1, img).expect("intensities are clamped"),
            LabelMap::new(size, NUM_CLASSES, labels).expect("classes are in range"),
            hits,
        )
    }

    /// Pull map for `to` pixels into `from`'s raster: each `to` pixel's true
    /// surface point projected into `from`, valid only where `from` sees that
    /// same point.
    fn correspondence(&self, to_hits: &[Hit], to: &View, from: &View) -> GridMap {
        let mut coords = Vec::with_capacity(to_hits.len());
        let mut valid = Vec::with_capacity(to_hits.len());
        for hit in to_hits {
            let projected = from.project(hit).and_then(|(x, y)| snap_in_bounds([x, y], from.size)).filter(|&[x, y]| {
                let (o, d) = from.ray(x, y);
                let seen = self.trace(o, d);
                match (seen.surface, hit.surface) {
                    (Surface::Background, Surface::Background) => true,
                    (a, b) if a == b => (seen.point - hit.point).norm() <= 1e-6 * (1.0 + hit.t),
                    _ => false,
                }
            });
            match projected {
                Some(c) => {
                    coords.push(c);
                    valid.push(true);
                }
                None => {
                    coords.push([0.0, 0.0]);
                    valid.push(false);
                }
            }
        }
        GridMap::new(to.size, from.size, coords, valid).expect("shapes match")
    }
}

/// Both views of a scene plus exact correspondences.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub wide_image: Image,
    pub wide_labels: LabelMap,
    pub narrow_image: Image,
    pub narrow_labels: LabelMap,
    /// Narrow-frame pull map into the wide raster.
    pub grid_into_narrow: GridMap,
    /// Wide-frame pull map into the narrow raster.
    pub grid_into_wide: GridMap,
    /// Wide pixels also seen by the narrow camera.
    pub overlap: Mask,
    /// Narrow pixels also seen by the wide camera.
    pub narrow_overlap: Mask,
}

pub fn render_scene(scene: &SynthScene) -> Result<ScenePair> {
    scene.validate()?;
    let rig = &scene.rig;
    let wide = View {
        intr: rig.cam_wide,
        center: Vector3::zeros(),
        rot: Matrix3::identity(),
        size: rig.size_wide,
    };
    let narrow = View {
        intr: rig.cam_narrow,
        center: Vector3::from(scene.baseline),
        rot: *rig.rotation_wide_to_narrow.matrix(),
        size: rig.size_narrow,
    };
    let tracer = Tracer::new(scene);
    let (wide_image, wide_labels, wide_hits) = tracer.render(&wide);
    let (narrow_image, narrow_labels, narrow_hits) = tracer.render(&narrow);
    let grid_into_narrow = tracer.correspondence(&narrow_hits, &narrow, &wide);
    let grid_into_wide = tracer.correspondence(&wide_hits, &wide, &narrow);
    let overlap = grid_into_wide.mask();
    let narrow_overlap = grid_into_narrow.mask();
    Ok(ScenePair {
        wide_image,
        wide_labels,
        narrow_image,
        narrow_labels,
        grid_into_narrow,
        grid_into_wide,
        overlap,
        narrow_overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Rotation3;
    use crate::flow::homography_map;
    use crate::raster::warp_labels;

    fn small_rig() -> CameraRig {
        CameraRig::default_pair(Size::new(96, 64)).unwrap()
    }

    #[test]
    fn empty_scene_rejected() {
        let mut s = SynthScene::new(small_rig());
        s.ground = false;
        assert!(matches!(render_scene(&s), Err(Error::Config(_))));
    }

    #[test]
    fn identical_cameras_give_identity_grid() {
        let size = Size::new(48, 32);
        let k = Intrinsics::from_hfov(size, 90.0).unwrap();
        let rig = CameraRig::new(k, k, Rotation3::identity(), size, size).unwrap();
        let pair = render_scene(&SynthScene::new(rig)).unwrap();
        assert_eq!(pair.narrow_image, pair.wide_image);
        for y in 0..size.height {
            for x in 0..size.width {
                if let Some(c) = pair.grid_into_narrow.get(x, y) {
                    assert!((c[0] - x as f64).abs() < 1e-9 && (c[1] - y as f64).abs() < 1e-9);
                }
            }
        }
        assert!(pair.narrow_overlap.count() == size.area());
    }

    #[test]
    fn frontal_box_rectangles_match_projection() {
        let rig = small_rig();
        let mut s = SynthScene::new(rig);
        s.ground = false;
        s.boxes.push(Billboard {
            class: SceneClass::Car,
            depth: 5.0,
            x0: -1.0,
            x1: 0.6,
            y0: -0.5,
            y1: 0.4,
            texture_seed: 3,
        });
        let pair = render_scene(&s).unwrap();
        for (cam, labels) in [(rig.cam_wide, &pair.wide_labels), (rig.cam_narrow, &pair.narrow_labels)] {
            let (u0, v0) = cam.project(&Vector3::new(-1.0, -0.5, 5.0)).unwrap();
            let (u1, v1) = cam.project(&Vector3::new(0.6, 0.4, 5.0)).unwrap();
            let (mut mnx, mut mny, mut mxx, mut mxy) = (usize::MAX, usize::MAX, 0, 0);
            for y in 0..labels.size().height {
                for x in 0..labels.size().width {
                    if labels.get(x, y) == SceneClass::Car as u8 {
                        mnx = mnx.min(x);
                        mny = mny.min(y);
                        mxx = mxx.max(x);
                        mxy = mxy.max(y);
                    }
                }
            }
            assert!((mnx as f64 - u0).abs() <= 1.0 && (mxx as f64 - u1).abs() <= 1.0, "{mnx} {u0} {mxx} {u1}");
            assert!((mny as f64 - v0).abs() <= 1.0 && (mxy as f64 - v1).abs() <= 1.0);
        }
    }

    #[test]
    fn box_parallax_matches_closed_form() {
        let rig = small_rig();
        let mut s = SynthScene::new(rig);
        s.ground = false;
        s.baseline = [0.3, 0.0, 0.0];
        let depth = 6.0;
        s.boxes.push(Billboard {
            class: SceneClass::Person,
            depth,
            x0: -2.0,
            x1: 2.0,
            y0: -1.0,
            y1: 1.0,
            texture_seed: 1,
        });
        let pair = render_scene(&s).unwrap();
        let h = homography_map(&rig).unwrap();
        let expected = rig.cam_wide.fx * 0.3 / depth;
        let mut checked = 0;
        for y in 0..64 {
            for x in 0..96 {
                let i = Size::new(96, 64).index(x, y);
                if pair.narrow_labels.data()[i] != SceneClass::Person as u8 {
                    continue;
                }
                let (Some(g), Some(p)) = (pair.grid_into_narrow.get(x, y), h.get(x, y)) else { continue };
                assert!((g[0] - p[0] - expected).abs() < 1e-9);
                assert!((g[1] - p[1]).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 100 && expected > 1.0);
    }

    #[test]
    fn gt_grid_carries_labels_off_boundaries() {
        let rig = small_rig();
        let scene = SynthScene::random(rig, SceneKind::NonPlanar, [0.25, 0.0, 0.0], 11);
        let pair = render_scene(&scene).unwrap();
        let (warped, mask) = warp_labels(&pair.wide_labels, &pair.grid_into_narrow).unwrap();
        let wl = &pair.wide_labels;
        let mut compared = 0;
        for y in 0..64 {
            for x in 0..96 {
                let Some(c) = pair.grid_into_narrow.get(x, y) else { continue };
                assert!(mask.get(x, y));
                // skip pixels whose wide-frame neighbourhood straddles a label edge
                let (cx, cy) = (c[0].round() as isize, c[1].round() as isize);
                let mut uniform = true;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = ((cx + dx).clamp(0, 95) as usize, (cy + dy).clamp(0, 63) as usize);
                        uniform &= wl.get(xx, yy) == wl.get(cx as usize, cy as usize);
                    }
                }
                if uniform {
                    assert_eq!(warped.get(x, y), pair.narrow_labels.get(x, y), "pixel ({x},{y})");
                    compared += 1;
                }
            }
        }
        assert!(compared > 96 * 64 / 2);
    }

    #[test]
    fn scene_text_roundtrip() {
        let scene = SynthScene::random(small_rig(), SceneKind::NonPlanar, [0.2, 0.0, 0.05], 4);
        let back = SynthScene::parse(&scene.to_text()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn render_is_deterministic() {
        let scene = SynthScene::random(small_rig(), SceneKind::NonPlanar, [0.2, 0.0, 0.0], 8);
        let a = render_scene(&scene).unwrap();
        let b = render_scene(&scene).unwrap();
        assert_eq!(a.narrow_image, b.narrow_image);
        assert_eq!(a.wide_labels, b.wide_labels);
        assert_eq!(a.grid_into_wide, b.grid_into_wide);
    }
}
