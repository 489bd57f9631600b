use super::{same_size, FlowField, GridMap, Image, LabelMap, Mask, ScoreMap, Size};
use crate::camera::Homography;
use crate::error::{Error, Result};

/// Default fill for out-of-view image pixels.
pub const IMAGE_FILL: f32 = 0.0;
/// Default fill for out-of-view score logits; low enough that arg-max never
/// picks a filled channel over a real score.
pub const SCORE_FILL: f32 = -1e4;

/// Tolerance for snapping source coordinates that land a hair outside the
/// source raster (round-off in homography products).
pub const BOUNDS_EPS: f64 = 1e-6;

pub(crate) fn snap_in_bounds(c: [f64; 2], source: Size) -> Option<[f64; 2]> {
    let (xmax, ymax) = ((source.width - 1) as f64, (source.height - 1) as f64);
    let [x, y] = c;
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    if x < -BOUNDS_EPS || y < -BOUNDS_EPS || x > xmax + BOUNDS_EPS || y > ymax + BOUNDS_EPS {
        return None;
    }
    Some([x.clamp(0.0, xmax), y.clamp(0.0, ymax)])
}

/// Bilinear stencil at an in-bounds coordinate: base pixel, fractional
/// offsets and the neighbour indices (equal to the base when the offset is 0).
#[derive(Debug, Clone, Copy)]
struct Stencil {
    i00: usize,
    i10: usize,
    i01: usize,
    i11: usize,
    fx: f64,
    fy: f64,
}

impl Stencil {
    #[inline]
    fn at(size: Size, x: f64, y: f64) -> Self {
        let x0 = (x.floor() as usize).min(size.width - 1);
        let y0 = (y.floor() as usize).min(size.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        Self {
            i00: size.index(x0, y0),
            i10: size.index(x1, y0),
            i01: size.index(x0, y1),
            i11: size.index(x1, y1),
            fx,
            fy,
        }
    }

    #[inline]
    fn eval(&self, f: impl Fn(usize) -> f64) -> f64 {
        let top = (1.0 - self.fx) * f(self.i00) + self.fx * f(self.i10);
        let bottom = (1.0 - self.fx) * f(self.i01) + self.fx * f(self.i11);
        (1.0 - self.fy) * top + self.fy * bottom
    }

    /// Pixels that carry nonzero weight.
    fn support(&self) -> impl Iterator<Item = usize> {
        let s = *self;
        [
            Some(s.i00),
            (s.fx > 0.0).then_some(s.i10),
            (s.fy > 0.0).then_some(s.i01),
            (s.fx > 0.0 && s.fy > 0.0).then_some(s.i11),
        ]
        .into_iter()
        .flatten()
    }
}

/// Bilinear sample of a single plane at an in-bounds coordinate.
pub fn bilinear_sample(plane: &[f32], size: Size, x: f64, y: f64) -> f64 {
    Stencil::at(size, x, y).eval(|i| plane[i] as f64)
}

/// Pull map for warping a source raster by `h` (source → target).
pub fn grid_from_homography(h: &Homography, target: Size, source: Size) -> Result<GridMap> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::config("grid sizes must be positive"));
    }
    let inv = h.inverse()?;
    let mut coords = Vec::with_capacity(target.area());
    let mut valid = Vec::with_capacity(target.area());
    for y in 0..target.height {
        for x in 0..target.width {
            match inv.apply(x as f64, y as f64) {
                Ok((sx, sy)) => {
                    coords.push([sx, sy]);
                    valid.push(true);
                }
                Err(_) => {
                    coords.push([f64::NAN, f64::NAN]);
                    valid.push(false);
                }
            }
        }
    }
    GridMap::new(target, source, coords, valid)
}

/// Pull map `p → p + flow[p]` over a raster of the flow's own size.
pub fn grid_from_flow(flow: &FlowField) -> GridMap {
    let size = flow.size();
    let coords = flow
        .data()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (x, y) = ((i % size.width) as f64, (i / size.width) as f64);
            [x + d[0] as f64, y + d[1] as f64]
        })
        .collect();
    GridMap::new(size, size, coords, vec![true; size.area()])
        .expect("flow grid shapes are consistent by construction")
}

/// Collapses two pull maps into one: `result[p] = inner(outer[p])`, with
/// `inner` interpolated bilinearly.
pub fn compose_grids(outer: &GridMap, inner: &GridMap) -> Result<GridMap> {
    same_size("compose_grids: outer source vs inner target", outer.source_size(), inner.size())?;
    let n = outer.size().area();
    let mut coords = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let ic = inner.coords();
    let iv = inner.valid();
    for (c, &v) in outer.coords().iter().zip(outer.valid()) {
        if !v {
            coords.push([f64::NAN, f64::NAN]);
            valid.push(false);
            continue;
        }
        let st = Stencil::at(inner.size(), c[0], c[1]);
        if st.support().any(|i| !iv[i]) {
            coords.push([f64::NAN, f64::NAN]);
            valid.push(false);
            continue;
        }
        coords.push([st.eval(|i| ic[i][0]), st.eval(|i| ic[i][1])]);
        valid.push(true);
    }
    GridMap::new(outer.size(), inner.source_size(), coords, valid)
}

fn warp_planar(
    data: &[f32],
    channels: usize,
    src: Size,
    grid: &GridMap,
    fill: f32,
) -> (Vec<f32>, Mask) {
    let out_size = grid.size();
    let n_out = out_size.area();
    let n_src = src.area();
    let mut out = vec![fill; n_out * channels];
    for (i, (c, &v)) in grid.coords().iter().zip(grid.valid()).enumerate() {
        if !v {
            continue;
        }
        let st = Stencil::at(src, c[0], c[1]);
        for ch in 0..channels {
            let plane = &data[ch * n_src..(ch + 1) * n_src];
            out[ch * n_out + i] = st.eval(|j| plane[j] as f64) as f32;
        }
    }
    (out, grid.mask())
}

fn check_grid(grid: &GridMap, src: Size) -> Result<()> {
    same_size("warp: grid source vs raster", grid.source_size(), src)
}

pub fn warp_image(src: &Image, grid: &GridMap, fill: f32) -> Result<(Image, Mask)> {
    check_grid(grid, src.size())?;
    let (data, mask) = warp_planar(src.data(), src.channels(), src.size(), grid, fill);
    Ok((Image::new(grid.size(), src.channels(), data)?, mask))
}

pub fn warp_scores(src: &ScoreMap, grid: &GridMap, fill: f32) -> Result<(ScoreMap, Mask)> {
    check_grid(grid, src.size())?;
    if !fill.is_finite() {
        return Err(Error::config("score fill must be finite"));
    }
    let (data, mask) = warp_planar(src.data(), src.classes(), src.size(), grid, fill);
    Ok((ScoreMap::from_parts_unchecked(grid.size(), src.classes(), data), mask))
}

/// One-hot bilinear label warp followed by arg-max (ties to the lowest
/// class). Invalid pixels get label 0.
pub fn warp_labels(labels: &LabelMap, grid: &GridMap) -> Result<(LabelMap, Mask)> {
    check_grid(grid, labels.size())?;
    let src = labels.data();
    let mut out = vec![0u8; grid.size().area()];
    for (i, (c, &v)) in grid.coords().iter().zip(grid.valid()).enumerate() {
        if !v {
            continue;
        }
        let st = Stencil::at(labels.size(), c[0], c[1]);
        let mut best: Option<(u8, f64)> = None;
        let mut candidates: Vec<u8> = st.support().map(|j| src[j]).collect();
        candidates.sort_unstable();
        candidates.dedup();
        for class in candidates {
            let score = st.eval(|j| if src[j] == class { 1.0 } else { 0.0 });
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((class, score));
            }
        }
        out[i] = best.map_or(0, |(c, _)| c);
    }
    Ok((LabelMap::new(grid.size(), labels.classes(), out)?, grid.mask()))
}
