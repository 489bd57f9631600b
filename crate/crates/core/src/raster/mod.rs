//! Raster containers with validity masks, backward-warping kernels and the
//! on-disk formats used by the CLI.
//!
//! All multi-channel rasters are stored planar and row-major:
//! `data[c * width * height + y * width + x]`.

mod io;
mod warp;

pub(crate) use warp::snap_in_bounds;
pub use io::{
    read_flo, read_head_container, read_labels, read_mask, read_pnm, read_scores, write_flo,
    write_head_container, write_labels, write_mask, write_pgm, write_pnm, write_ppm, write_scores,
    ContainerKind, HeadBlob, FLO_MAGIC, SEMSHARE_MAGIC, SEMSHARE_VERSION,
};
pub use warp::{
    bilinear_sample, compose_grids, grid_from_flow, grid_from_homography, warp_image,
    warp_labels, warp_scores, BOUNDS_EPS, IMAGE_FILL, SCORE_FILL,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn area(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidRaster(format!("{what}: data length {got}, expected {want}")));
    }
    Ok(())
}

fn check_nonempty(what: &str, size: Size) -> Result<()> {
    if size.is_empty() {
        return Err(Error::InvalidRaster(format!("{what}: empty size {size}")));
    }
    Ok(())
}

pub(crate) fn same_size(what: &str, a: Size, b: Size) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Per-pixel boolean validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: Size,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(size: Size, data: Vec<bool>) -> Result<Self> {
        check_len("mask", data.len(), size.area())?;
        Ok(Self { size, data })
    }

    pub fn full(size: Size) -> Self {
        Self { size, data: vec![true; size.area()] }
    }

    pub fn empty(size: Size) -> Self {
        Self { size, data: vec![false; size.area()] }
    }

    pub fn from_fn(size: Size, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                data.push(f(x, y));
            }
        }
        Self { size, data }
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[self.size.index(x, y)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        same_size("mask and", self.size, other.size)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(Mask { size: self.size, data })
    }

    pub fn not(&self) -> Mask {
        Mask { size: self.size, data: self.data.iter().map(|v| !v).collect() }
    }
}

/// Intensity image with values in `[0, 1]`, one or three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: Size,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(size: Size, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_nonempty("image", size)?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidRaster(format!("image channels must be 1 or 3, got {channels}")));
        }
        check_len("image", data.len(), size.area() * channels)?;
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidRaster(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { size, channels, data })
    }

    pub fn from_fn(size: Size, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                data.push(f(x, y));
            }
        }
        Self::new(size, 1, data)
    }

    pub fn constant(size: Size, channels: usize, value: f32) -> Result<Self> {
        Self::new(size, channels, vec![value; size.area() * channels])
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.size.area();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.size.area() + self.size.index(x, y)]
    }

    /// Single-channel version: luma 0.299/0.587/0.114 for RGB, a clone for gray.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| {
                (0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64).clamp(0.0, 1.0) as f32
            })
            .collect();
        Image { size: self.size, channels: 1, data }
    }

    /// Channel-mean gray, used by the SSIM metric.
    pub fn to_mean_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.size.area();
        let data = (0..n)
            .map(|i| {
                let s: f64 = (0..self.channels).map(|c| self.data[c * n + i] as f64).sum();
                (s / self.channels as f64) as f32
            })
            .collect();
        Image { size: self.size, channels: 1, data }
    }
}

/// Per-pixel, per-class real scores (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    size: Size,
    classes: usize,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(size: Size, classes: usize, data: Vec<f32>) -> Result<Self> {
        check_nonempty("score map", size)?;
        if classes < 2 {
            return Err(Error::InvalidRaster(format!("score map needs >= 2 classes, got {classes}")));
        }
        check_len("score map", data.len(), size.area() * classes)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster("score map contains non-finite values".into()));
        }
        Ok(Self { size, classes, data })
    }

    pub fn zeros(size: Size, classes: usize) -> Result<Self> {
        Self::new(size, classes, vec![0.0; size.area() * classes])
    }

    /// `margin` on the labelled class, zero elsewhere.
    pub fn one_hot(labels: &LabelMap, margin: f32) -> Self {
        let n = labels.size.area();
        let mut data = vec![0.0f32; n * labels.classes];
        for (i, &l) in labels.data.iter().enumerate() {
            data[l as usize * n + i] = margin;
        }
        Self { size: labels.size, classes: labels.classes, data }
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.size.area();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize) -> f32 {
        self.data[c * self.size.area() + i]
    }

    /// Class scores of pixel `i` gathered into `out`.
    pub fn pixel_into(&self, i: usize, out: &mut [f32]) {
        let n = self.size.area();
        for (c, o) in out.iter_mut().enumerate().take(self.classes) {
            *o = self.data[c * n + i];
        }
    }

    /// Arg-max per pixel, ties to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.size.area();
        let data = (0..n)
            .map(|i| {
                let mut best = 0;
                let mut best_v = self.data[i];
                for c in 1..self.classes {
                    let v = self.data[c * n + i];
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap { size: self.size, classes: self.classes, data }
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.plane(c).to_vec()
    }

    pub(crate) fn from_parts_unchecked(size: Size, classes: usize, data: Vec<f32>) -> Self {
        Self { size, classes, data }
    }
}

/// Per-pixel class index in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    size: Size,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(size: Size, classes: usize, data: Vec<u8>) -> Result<Self> {
        check_nonempty("label map", size)?;
        if !(1..=256).contains(&classes) {
            return Err(Error::InvalidRaster(format!("label map class count {classes} out of range")));
        }
        check_len("label map", data.len(), size.area())?;
        if let Some(l) = data.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidRaster(format!("label {l} >= class count {classes}")));
        }
        Ok(Self { size, classes, data })
    }

    pub fn from_fn(size: Size, classes: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                data.push(f(x, y));
            }
        }
        Self::new(size, classes, data)
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[self.size.index(x, y)]
    }
}

/// Backward displacement field: pixel `p` samples its source at `p + flow[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    size: Size,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(size: Size, data: Vec<[f32; 2]>) -> Result<Self> {
        check_nonempty("flow field", size)?;
        check_len("flow field", data.len(), size.area())?;
        if data.iter().any(|d| !d[0].is_finite() || !d[1].is_finite()) {
            return Err(Error::InvalidRaster("flow field contains non-finite values".into()));
        }
        Ok(Self { size, data })
    }

    pub fn zeros(size: Size) -> Self {
        Self { size, data: vec![[0.0, 0.0]; size.area()] }
    }

    pub fn uniform(size: Size, dx: f32, dy: f32) -> Self {
        Self { size, data: vec![[dx, dy]; size.area()] }
    }

    pub fn from_fn(size: Size, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Result<Self> {
        let mut data = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                data.push(f(x, y));
            }
        }
        Self::new(size, data)
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[self.size.index(x, y)]
    }
}

/// Per-target-pixel absolute source coordinate plus validity.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    size: Size,
    source: Size,
    coords: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl GridMap {
    /// Builds a grid; entries with non-finite or out-of-bounds sources are
    /// marked invalid regardless of the supplied flag. Invalid entries carry
    /// the coordinate `[0, 0]`.
    pub fn new(size: Size, source: Size, coords: Vec<[f64; 2]>, valid: Vec<bool>) -> Result<Self> {
        check_nonempty("grid", size)?;
        check_nonempty("grid source", source)?;
        check_len("grid coords", coords.len(), size.area())?;
        check_len("grid validity", valid.len(), size.area())?;
        let mut grid = Self { size, source, coords, valid };
        for i in 0..grid.coords.len() {
            if grid.valid[i] {
                match warp::snap_in_bounds(grid.coords[i], source) {
                    Some(c) => grid.coords[i] = c,
                    None => grid.valid[i] = false,
                }
            }
            if !grid.valid[i] {
                grid.coords[i] = [0.0, 0.0];
            }
        }
        Ok(grid)
    }

    pub fn identity(size: Size) -> Self {
        let coords = (0..size.height)
            .flat_map(|y| (0..size.width).map(move |x| [x as f64, y as f64]))
            .collect();
        Self { size, source: size, coords, valid: vec![true; size.area()] }
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn source_size(&self) -> Size {
        self.source
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let i = self.size.index(x, y);
        self.valid[i].then(|| self.coords[i])
    }

    pub fn mask(&self) -> Mask {
        Mask { size: self.size, data: self.valid.clone() }
    }

    /// Displacement field `coords - p`, zero on invalid pixels. Only
    /// meaningful when source and target share a size.
    pub fn displacement(&self) -> Vec<[f64; 2]> {
        self.coords
            .iter()
            .zip(&self.valid)
            .enumerate()
            .map(|(i, (c, &v))| {
                if !v {
                    return [0.0, 0.0];
                }
                let (x, y) = ((i % self.size.width) as f64, (i / self.size.width) as f64);
                [c[0] - x, c[1] - y]
            })
            .collect()
    }

    /// Restricts validity to pixels where `mask` is also set.
    pub fn restrict(&self, mask: &Mask) -> Result<GridMap> {
        same_size("grid restrict", self.size, mask.size())?;
        let mut g = self.clone();
        for (v, &m) in g.valid.iter_mut().zip(mask.data()) {
            *v &= m;
        }
        Ok(g)
    }
}
