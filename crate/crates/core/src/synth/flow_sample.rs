//! Random perspective-transform samples with exact ground-truth flow.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Homography;
use crate::error::Result;
use crate::raster::{warp_image, FlowField, GridMap, Image, Mask, Size, IMAGE_FILL};

/// Sampling ranges for one random transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTransformSpec {
    pub focal_factor: (f64, f64),
    /// Maximum absolute translation per axis, pixels.
    pub max_translation: f64,
    /// Maximum absolute rotation, degrees.
    pub max_rotation_deg: f64,
    pub seed: u64,
}

impl RandomTransformSpec {
    pub fn new(seed: u64) -> Self {
        Self { focal_factor: (0.95, 1.05), max_translation: 10.0, max_rotation_deg: 5.0, seed }
    }

    pub fn sample(&self) -> TransformParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = self.focal_factor;
        let focal_factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let tx = sym(self.max_translation);
        let ty = sym(self.max_translation);
        let angle_deg = sym(self.max_rotation_deg);
        TransformParams { focal_factor, tx, ty, angle_deg }
    }
}

/// One drawn transform. Applied as a pull map from the warped frame back
/// into the original: `source = T(t) · R_c(θ) · S_c(f) · p`, where `R_c` and
/// `S_c` act about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub focal_factor: f64,
    pub tx: f64,
    pub ty: f64,
    pub angle_deg: f64,
}

impl TransformParams {
    pub fn identity() -> Self {
        Self { focal_factor: 1.0, tx: 0.0, ty: 0.0, angle_deg: 0.0 }
    }

    /// Target → source map for an image of `size`. The focal scaling is the
    /// intrinsics ratio `K' K⁻¹`, a scaling about the principal point.
    pub fn homography(&self, size: Size) -> Result<Homography> {
        let cx = (size.width as f64 - 1.0) / 2.0;
        let cy = (size.height as f64 - 1.0) / 2.0;
        let f = self.focal_factor;
        let k = Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
        let k_inv = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        let scale = Matrix3::new(f, 0.0, 0.0, 0.0, f, 0.0, 0.0, 0.0, 1.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let shift = Matrix3::new(1.0, 0.0, self.tx, 0.0, 1.0, self.ty, 0.0, 0.0, 1.0);
        Homography::new(shift * k * rot * scale * k_inv)
    }
}

#[derive(Debug, Clone)]
pub struct FlowSample {
    pub params: TransformParams,
    pub warped: Image,
    /// Backward flow: `warped(p) = img(p + flow(p))`.
    pub flow: FlowField,
    pub mask: Mask,
}

pub fn gen_flow_sample(img: &Image, spec: &RandomTransformSpec) -> Result<FlowSample> {
    flow_sample_with(img, spec.sample())
}

pub fn flow_sample_with(img: &Image, params: TransformParams) -> Result<FlowSample> {
    let size = img.size();
    let h = params.homography(size)?;
    let mut coords = Vec::with_capacity(size.area());
    let mut flow = Vec::with_capacity(size.area());
    for y in 0..size.height {
        for x in 0..size.width {
            let (sx, sy) = h.apply(x as f64, y as f64)?;
            coords.push([sx, sy]);
            flow.push([(sx - x as f64) as f32, (sy - y as f64) as f32]);
        }
    }
    let grid = GridMap::new(size, size, coords, vec![true; size.area()])?;
    let (warped, mask) = warp_image(img, &grid, IMAGE_FILL)?;
    Ok(FlowSample { params, warped, flow: FlowField::new(size, flow)?, mask })
}
