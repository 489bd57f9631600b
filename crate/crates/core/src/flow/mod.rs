//! Coarse-to-fine Horn–Schunck optical flow and the two-stage
//! (homography, then flow) warp between the rig's cameras.
//!
//! Per pyramid level the source is warped once by the current estimate and
//! the increment is solved by Jacobi sweeps on the linearized energy
//!
//! ```text
//! E = Σ_p (I_t + I_x du + I_y dv)² + (α²/4) Σ_edges (Δu² + Δv²)
//! ```
//!
//! where the regularizer acts on the total flow over 4-neighbour edges
//! (Neumann border: edges leaving the raster are absent). With the α²/4 per
//! edge weight the interior update is exactly the classic
//! `u = ū - I_x (I_x ū + I_y v̄ + I_t) / (α² + I_x² + I_y²)` on increments.
//! Intensities enter in 0..255 units.

mod pyramid;
mod viz;

pub use pyramid::{level_sizes, Pyramid, SMOOTH_KERNEL};
pub use viz::flow_to_color;

use pyramid::Plane;

use crate::camera::{homography_from_rig, CameraRig, Homography};
use crate::error::{Error, Result};
use crate::raster::{
    compose_grids, grid_from_flow, grid_from_homography, same_size, warp_image, FlowField,
    GridMap, Image, Mask, Size, BOUNDS_EPS, IMAGE_FILL,
};

/// Fixed ratio between consecutive pyramid levels.
pub const DOWNSCALE_FACTOR: f64 = 0.5;
/// Intensity units used by the data term.
pub const INTENSITY_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub num_levels: usize,
    pub iterations_per_level: usize,
    /// α in the energy above.
    pub smoothness_weight: f64,
    pub min_level_size: usize,
    /// Re-linearizations per level; the iteration budget is spent once per pass.
    pub warps_per_level: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            num_levels: 4,
            iterations_per_level: 50,
            smoothness_weight: 15.0,
            min_level_size: 16,
            warps_per_level: 3,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 1 {
            return Err(Error::config("num_levels must be >= 1"));
        }
        if self.iterations_per_level < 1 {
            return Err(Error::config("iterations_per_level must be >= 1"));
        }
        if !(self.smoothness_weight > 0.0 && self.smoothness_weight.is_finite()) {
            return Err(Error::config("smoothness_weight must be positive"));
        }
        if self.min_level_size < 3 {
            return Err(Error::config("min_level_size must be >= 3"));
        }
        if self.warps_per_level < 1 {
            return Err(Error::config("warps_per_level must be >= 1"));
        }
        Ok(())
    }
}

/// Diagnostics from one estimation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    /// Pyramid sizes, finest first.
    pub level_sizes: Vec<Size>,
    /// Energy before the first sweep and after every sweep, one list per
    /// linearization pass at the coarsest level.
    pub coarsest_energy: Vec<Vec<f64>>,
}

/// Backward flow such that warping `source` by it approximates `target`.
pub fn estimate_flow(target: &Image, source: &Image, cfg: &FlowConfig) -> Result<FlowField> {
    Ok(estimate_flow_traced(target, source, None, None, cfg)?.0)
}

/// As [`estimate_flow`], ignoring the data term wherever the source lookup
/// touches a pixel outside `source_valid`.
pub fn estimate_flow_masked(
    target: &Image,
    source: &Image,
    source_valid: &Mask,
    cfg: &FlowConfig,
) -> Result<FlowField> {
    Ok(estimate_flow_traced(target, source, None, Some(source_valid), cfg)?.0)
}

/// General form. `target_valid` drops the data term at target pixels whose
/// intensities are not real observations (e.g. fill from an earlier warp);
/// `source_valid` as in [`estimate_flow_masked`].
pub fn estimate_flow_traced(
    target: &Image,
    source: &Image,
    target_valid: Option<&Mask>,
    source_valid: Option<&Mask>,
    cfg: &FlowConfig,
) -> Result<(FlowField, FlowTrace)> {
    cfg.validate()?;
    same_size("estimate_flow: target vs source", target.size(), source.size())?;
    if let Some(m) = source_valid {
        same_size("estimate_flow: source mask", m.size(), source.size())?;
    }
    if let Some(m) = target_valid {
        same_size("estimate_flow: target mask", m.size(), target.size())?;
    }
    let size = target.size();
    if size.width < cfg.min_level_size || size.height < cfg.min_level_size {
        return Err(Error::config(format!(
            "image {size} is smaller than the minimum level size {}",
            cfg.min_level_size
        )));
    }

    let (t_plane, s_plane) = to_planes(target, source);
    let sizes = level_sizes(size, cfg.num_levels, cfg.min_level_size);
    let t_pyr = Pyramid::build(t_plane, &sizes);
    let s_pyr = Pyramid::build(s_plane, &sizes);
    let mask_pyramid = |m: &Mask| {
        let base = Plane::new(size, m.data().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());
        let pyr = Pyramid::build(base, &sizes);
        // a coarse pixel is trusted only when its whole smoothing footprint is
        pyr.levels
            .into_iter()
            .enumerate()
            .map(|(l, p)| if l == 0 { p } else { threshold(p) })
            .collect::<Vec<_>>()
    };
    let m_pyr = source_valid.map(mask_pyramid);
    let t_pyr_mask = target_valid.map(mask_pyramid);

    let mut trace = FlowTrace { level_sizes: sizes.clone(), coarsest_energy: Vec::new() };
    let coarsest = sizes.len() - 1;
    let mut u = vec![0.0; sizes[coarsest].area()];
    let mut v = vec![0.0; sizes[coarsest].area()];
    for level in (0..sizes.len()).rev() {
        if level != coarsest {
            (u, v) = upsample_flow(&u, &v, sizes[level + 1], sizes[level]);
        }
        let masks = (t_pyr_mask.as_ref().map(|m| &m[level]), m_pyr.as_ref().map(|m| &m[level]));
        for _ in 0..cfg.warps_per_level {
            let problem = LinearizedLevel::new(&t_pyr.levels[level], &s_pyr.levels[level], masks, &u, &v);
            let energies = problem.solve(&mut u, &mut v, cfg, level == coarsest);
            if level == coarsest {
                trace.coarsest_energy.push(energies);
            }
        }
    }

    let data = u.iter().zip(&v).map(|(a, b)| [*a as f32, *b as f32]).collect();
    Ok((FlowField::new(size, data)?, trace))
}

/// Gray planes in 0..255 units relative to the pair's joint minimum, so a
/// common intensity offset cancels before any arithmetic.
fn to_planes(target: &Image, source: &Image) -> (Plane, Plane) {
    let (t, s) = (target.to_gray(), source.to_gray());
    let min = t.data().iter().chain(s.data()).copied().fold(f32::INFINITY, f32::min) as f64;
    let conv = |img: &Image| {
        Plane::new(
            img.size(),
            img.data().iter().map(|&x| (x as f64 - min) * INTENSITY_SCALE).collect(),
        )
    };
    (conv(&t), conv(&s))
}

fn threshold(p: Plane) -> Plane {
    let data = p.data.iter().map(|&v| if v >= 1.0 - 1e-9 { 1.0 } else { 0.0 }).collect();
    Plane::new(p.size, data)
}

fn upsample_flow(u: &[f64], v: &[f64], from: Size, to: Size) -> (Vec<f64>, Vec<f64>) {
    let up = Plane::new(from, u.to_vec());
    let vp = Plane::new(from, v.to_vec());
    let mut uo = Vec::with_capacity(to.area());
    let mut vo = Vec::with_capacity(to.area());
    let (xmax, ymax) = ((from.width - 1) as f64, (from.height - 1) as f64);
    for y in 0..to.height {
        for x in 0..to.width {
            let cx = (x as f64 * DOWNSCALE_FACTOR).min(xmax);
            let cy = (y as f64 * DOWNSCALE_FACTOR).min(ymax);
            uo.push(bilinear(&up, cx, cy) / DOWNSCALE_FACTOR);
            vo.push(bilinear(&vp, cx, cy) / DOWNSCALE_FACTOR);
        }
    }
    (uo, vo)
}

#[inline]
fn bilinear(p: &Plane, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let a = p.at_clamped(x0, y0);
    let b = p.at_clamped(x0 + 1, y0);
    let c = p.at_clamped(x0, y0 + 1);
    let d = p.at_clamped(x0 + 1, y0 + 1);
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
}

/// Data-term coefficients of one linearization around `(u0, v0)`.
struct LinearizedLevel {
    size: Size,
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
    data_on: Vec<bool>,
    u0: Vec<f64>,
    v0: Vec<f64>,
}

impl LinearizedLevel {
    fn new(
        target: &Plane,
        source: &Plane,
        (target_mask, source_mask): (Option<&Plane>, Option<&Plane>),
        u: &[f64],
        v: &[f64],
    ) -> Self {
        let size = target.size;
        let Size { width: w, height: h } = size;
        let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
        let mut warped = vec![0.0; size.area()];
        let mut data_on = vec![false; size.area()];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f64 + u[i];
                let sy = y as f64 + v[i];
                let inside = sx >= -BOUNDS_EPS && sy >= -BOUNDS_EPS && sx <= xmax + BOUNDS_EPS && sy <= ymax + BOUNDS_EPS;
                let (sx, sy) = (sx.clamp(0.0, xmax), sy.clamp(0.0, ymax));
                warped[i] = bilinear(source, sx, sy);
                data_on[i] = inside
                    && target_mask.is_none_or(|m| m.data[i] > 0.5)
                    && source_mask.is_none_or(|m| support_valid(m, sx, sy));
            }
        }
        let warped = Plane::new(size, warped);
        let mut ix = vec![0.0; size.area()];
        let mut iy = vec![0.0; size.area()];
        let mut it = vec![0.0; size.area()];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (xi, yi) = (x as isize, y as isize);
                ix[i] = 0.5 * (warped.at_clamped(xi + 1, yi) - warped.at_clamped(xi - 1, yi));
                iy[i] = 0.5 * (warped.at_clamped(xi, yi + 1) - warped.at_clamped(xi, yi - 1));
                it[i] = warped.data[i] - target.data[i];
                if !data_on[i] {
                    ix[i] = 0.0;
                    iy[i] = 0.0;
                    it[i] = 0.0;
                }
            }
        }
        Self { size, ix, iy, it, data_on, u0: u.to_vec(), v0: v.to_vec() }
    }

    /// Runs the Jacobi sweeps in place; returns the energy trace when asked.
    fn solve(&self, u: &mut Vec<f64>, v: &mut Vec<f64>, cfg: &FlowConfig, trace: bool) -> Vec<f64> {
        let alpha2 = cfg.smoothness_weight * cfg.smoothness_weight;
        let mut energies = Vec::new();
        if trace {
            energies.push(self.energy(u, v, alpha2));
        }
        let mut nu = vec![0.0; u.len()];
        let mut nv = vec![0.0; v.len()];
        for _ in 0..cfg.iterations_per_level {
            self.sweep(u, v, &mut nu, &mut nv, alpha2);
            std::mem::swap(u, &mut nu);
            std::mem::swap(v, &mut nv);
            if trace {
                energies.push(self.energy(u, v, alpha2));
            }
        }
        energies
    }

    fn sweep(&self, u: &[f64], v: &[f64], nu: &mut [f64], nv: &mut [f64], alpha2: f64) {
        let Size { width: w, height: h } = self.size;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
                if x > 0 {
                    su += u[i - 1];
                    sv += v[i - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    su += u[i + 1];
                    sv += v[i + 1];
                    n += 1.0;
                }
                if y > 0 {
                    su += u[i - w];
                    sv += v[i - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    su += u[i + w];
                    sv += v[i + w];
                    n += 1.0;
                }
                let a = su / n - self.u0[i];
                let b = sv / n - self.v0[i];
                let (du, dv) = if self.data_on[i] {
                    let (gx, gy) = (self.ix[i], self.iy[i]);
                    let k = alpha2 * n / 4.0;
                    let r = (self.it[i] + gx * a + gy * b) / (k + gx * gx + gy * gy);
                    (a - gx * r, b - gy * r)
                } else {
                    (a, b)
                };
                nu[i] = self.u0[i] + du;
                nv[i] = self.v0[i] + dv;
            }
        }
    }

    fn energy(&self, u: &[f64], v: &[f64], alpha2: f64) -> f64 {
        let Size { width: w, height: h } = self.size;
        let lambda = alpha2 / 4.0;
        let mut data = 0.0;
        let mut smooth = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if self.data_on[i] {
                    let r = self.it[i] + self.ix[i] * (u[i] - self.u0[i]) + self.iy[i] * (v[i] - self.v0[i]);
                    data += r * r;
                }
                if x + 1 < w {
                    smooth += (u[i + 1] - u[i]).powi(2) + (v[i + 1] - v[i]).powi(2);
                }
                if y + 1 < h {
                    smooth += (u[i + w] - u[i]).powi(2) + (v[i + w] - v[i]).powi(2);
                }
            }
        }
        data + lambda * smooth
    }
}

fn support_valid(mask: &Plane, x: f64, y: f64) -> bool {
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let ok = |xx: isize, yy: isize| mask.at_clamped(xx, yy) > 0.5;
    ok(x0, y0)
        && (fx == 0.0 || ok(x0 + 1, y0))
        && (fy == 0.0 || ok(x0, y0 + 1))
        && (fx == 0.0 || fy == 0.0 || ok(x0 + 1, y0 + 1))
}

/// Intermediate products of the two-stage warp, kept for debugging dumps.
#[derive(Debug, Clone)]
pub struct TwoStageWarp {
    /// Stage I pull map (target frame → source frame).
    pub homography_grid: GridMap,
    /// Source image after Stage I, in the target frame.
    pub stage1_image: Image,
    pub stage1_mask: Mask,
    /// Stage II residual flow in the target frame.
    pub flow: FlowField,
    /// Single pull map for both stages.
    pub composed: GridMap,
}

/// Two-stage warp pulling `rig`'s wide-camera pixels into the narrow frame.
pub fn two_stage_warp(
    rig: &CameraRig,
    wide_img: &Image,
    narrow_img: &Image,
    cfg: &FlowConfig,
) -> Result<TwoStageWarp> {
    same_size("two_stage_map: wide image vs rig", wide_img.size(), rig.size_wide)?;
    same_size("two_stage_map: narrow image vs rig", narrow_img.size(), rig.size_narrow)?;
    let h = homography_from_rig(rig)?;
    let homography_grid = grid_from_homography(&h, rig.size_narrow, rig.size_wide)?;
    // when Stage I shrinks the source, average over each target pixel's
    // footprint first so the flow compares like with like
    let footprint = source_footprint(&h, rig.size_narrow)?;
    let source = if footprint > 1.25 { area_prefilter(wide_img, footprint) } else { wide_img.clone() };
    let (stage1_image, stage1_mask) = warp_image(&source, &homography_grid, IMAGE_FILL)?;
    let flow = estimate_flow_masked(narrow_img, &stage1_image, &stage1_mask, cfg)?;
    let composed = compose_grids(&grid_from_flow(&flow), &homography_grid)?;
    Ok(TwoStageWarp { homography_grid, stage1_image, stage1_mask, flow, composed })
}

pub fn two_stage_map(
    rig: &CameraRig,
    wide_img: &Image,
    narrow_img: &Image,
    cfg: &FlowConfig,
) -> Result<GridMap> {
    Ok(two_stage_warp(rig, wide_img, narrow_img, cfg)?.composed)
}

/// Linear size of one target pixel in source pixels, at the target center.
fn source_footprint(h: &Homography, target: Size) -> Result<f64> {
    let inv = h.inverse()?;
    let (cx, cy) = ((target.width as f64 - 1.0) / 2.0, (target.height as f64 - 1.0) / 2.0);
    let p = inv.apply(cx, cy)?;
    let px = inv.apply(cx + 1.0, cy)?;
    let py = inv.apply(cx, cy + 1.0)?;
    let det = (px.0 - p.0) * (py.1 - p.1) - (px.1 - p.1) * (py.0 - p.0);
    Ok(det.abs().sqrt())
}

/// Separable box of width `s` (fractional end taps), replicate border.
fn area_prefilter(img: &Image, s: f64) -> Image {
    let r = ((s - 1.0) / 2.0).ceil().max(0.0) as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (s / 2.0 + 0.5 - d.abs() as f64).clamp(0.0, 1.0)).collect();
    let norm: f64 = taps.iter().sum();
    let size = img.size();
    let (w, hgt) = (size.width as isize, size.height as isize);
    let mut out = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let mut tmp = vec![0.0f64; size.area()];
        for y in 0..hgt {
            for x in 0..w {
                let acc: f64 = taps
                    .iter()
                    .zip(-r..=r)
                    .map(|(t, d)| t * plane[(y * w + (x + d).clamp(0, w - 1)) as usize] as f64)
                    .sum();
                tmp[(y * w + x) as usize] = acc / norm;
            }
        }
        for y in 0..hgt {
            for x in 0..w {
                let acc: f64 =
                    taps.iter().zip(-r..=r).map(|(t, d)| t * tmp[((y + d).clamp(0, hgt - 1) * w + x) as usize]).sum();
                out.push((acc / norm).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(size, img.channels(), out).expect("averages stay in range")
}

/// Stage I alone.
pub fn homography_map(rig: &CameraRig) -> Result<GridMap> {
    grid_from_homography(&homography_from_rig(rig)?, rig.size_narrow, rig.size_wide)
}
