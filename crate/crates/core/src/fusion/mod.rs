//! Per-pixel fusion heads merging propagated and native class scores.
//!
//! Every layer is a per-pixel affine map (a 1×1 convolution). Input at each
//! pixel is `z = [propagated; native]` with `2C` entries, output is `C`
//! logits. Wiring per variant:
//!
//! ```text
//! Basic       y = L(z)
//! Residual    h = ReLU(L_in z);  t = ReLU(L_mid h + L_skip z);  y = L_cls t
//! Bottleneck  s = L_p p + L_n n;  m = ReLU(L_down s);  t = ReLU(L_up m + s);  y = L_cls t
//! ```
//!
//! The bottleneck's common width is `BOTTLENECK_EXPANSION` times its
//! narrowest width. Pixels outside the fusion mask are passed through as the
//! native scores.

mod train;

pub use train::{train_fusion, FusionSample, TrainConfig, TrainOutcome};

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{
    read_head_container, same_size, write_head_container, HeadBlob, Mask, ScoreMap,
};

/// Width of the bottleneck's add path relative to its narrowest layer.
pub const BOTTLENECK_EXPANSION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    Basic,
    Residual { hidden: usize },
    Bottleneck { width: usize },
}

impl FusionVariant {
    /// Residual head with the default hidden width `2C`.
    pub fn residual(classes: usize) -> Self {
        FusionVariant::Residual { hidden: 2 * classes }
    }

    /// Bottleneck head with the default width `ceil(C / 2)`.
    pub fn bottleneck(classes: usize) -> Self {
        FusionVariant::Bottleneck { width: classes.div_ceil(2) }
    }

    /// Parses `basic`, `residual` or `bottleneck` with default widths.
    pub fn from_name(name: &str, classes: usize) -> Result<Self> {
        match name {
            "basic" => Ok(FusionVariant::Basic),
            "residual" => Ok(Self::residual(classes)),
            "bottleneck" => Ok(Self::bottleneck(classes)),
            other => Err(Error::config(format!("unknown fusion variant `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionVariant::Basic => "basic",
            FusionVariant::Residual { .. } => "residual",
            FusionVariant::Bottleneck { .. } => "bottleneck",
        }
    }

    fn tag_and_width(&self) -> (u32, usize) {
        match *self {
            FusionVariant::Basic => (0, 0),
            FusionVariant::Residual { hidden } => (1, hidden),
            FusionVariant::Bottleneck { width } => (2, width),
        }
    }

    /// `(out, in)` for each layer, in storage order.
    fn layer_shapes(&self, c: usize) -> Vec<(usize, usize)> {
        match *self {
            FusionVariant::Basic => vec![(c, 2 * c)],
            FusionVariant::Residual { hidden: h } => vec![(h, 2 * c), (h, h), (h, 2 * c), (c, h)],
            FusionVariant::Bottleneck { width: b } => {
                let d = BOTTLENECK_EXPANSION * b;
                vec![(d, c), (d, c), (b, d), (d, b), (c, d)]
            }
        }
    }
}

/// One per-pixel affine layer; `w` is row-major `out × inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out: usize,
    pub inp: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self { out, inp, w: vec![0.0; out * inp], b: vec![0.0; out] }
    }

    fn apply(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        for o in 0..self.out {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            y.push(self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }

    /// Accumulates parameter gradients into `g` and adds `Wᵀ dy` to `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], g: &mut Linear, dx: Option<&mut [f64]>) {
        for o in 0..self.out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g.b[o] += d;
            let row = &mut g.w[o * self.inp..(o + 1) * self.inp];
            for (gw, xv) in row.iter_mut().zip(x) {
                *gw += d * xv;
            }
        }
        if let Some(dx) = dx {
            for o in 0..self.out {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.inp..(o + 1) * self.inp];
                for (dxv, w) in dx.iter_mut().zip(row) {
                    *dxv += d * w;
                }
            }
        }
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Gates `d` by the ReLU derivative of pre-activation `pre` (0 at 0).
fn relu_grad(pre: &[f64], d: &mut [f64]) {
    for (g, p) in d.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    variant: FusionVariant,
    classes: usize,
    layers: Vec<Linear>,
}

/// Per-pixel intermediate values kept for the backward pass.
#[derive(Debug, Default)]
struct Tape {
    z: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    s: Vec<f64>,
    m: Vec<f64>,
    t_pre: Vec<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
}

/// Gradients of a scalar loss `Σ grad_out · output`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    /// Same shapes as the head's layers.
    pub layers: Vec<Linear>,
    /// Planar `C × N`, zero at masked-out pixels.
    pub propagated: Vec<f64>,
    /// Planar `C × N`; identity pass-through at masked-out pixels.
    pub native: Vec<f64>,
}

impl FusionHead {
    pub fn zeros(variant: FusionVariant, classes: usize) -> Result<Self> {
        Self::check_widths(variant, classes)?;
        let layers = variant.layer_shapes(classes).into_iter().map(|(o, i)| Linear::zeros(o, i)).collect();
        Ok(Self { variant, classes, layers })
    }

    /// Uniform init in `[-s, s]` with `s = scale / sqrt(fan_in)`, biases zero.
    pub fn random(variant: FusionVariant, classes: usize, scale: f64, seed: u64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::config("init scale must be finite and >= 0"));
        }
        let mut head = Self::zeros(variant, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut head.layers {
            let s = scale / (layer.inp as f64).sqrt();
            for w in &mut layer.w {
                *w = if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
            }
        }
        Ok(head)
    }

    /// Basic head that returns the native scores.
    pub fn native_identity(classes: usize) -> Result<Self> {
        let mut head = Self::zeros(FusionVariant::Basic, classes)?;
        let l = &mut head.layers[0];
        for c in 0..classes {
            l.w[c * 2 * classes + classes + c] = 1.0;
        }
        Ok(head)
    }

    pub fn from_layers(variant: FusionVariant, classes: usize, layers: Vec<Linear>) -> Result<Self> {
        Self::check_widths(variant, classes)?;
        let shapes = variant.layer_shapes(classes);
        if layers.len() != shapes.len() {
            return Err(Error::dim(format!(
                "{} head needs {} layers, got {}",
                variant.name(),
                shapes.len(),
                layers.len()
            )));
        }
        for (k, (l, &(o, i))) in layers.iter().zip(&shapes).enumerate() {
            if l.out != o || l.inp != i || l.w.len() != o * i || l.b.len() != o {
                return Err(Error::dim(format!("layer {k}: expected {o}x{i}")));
            }
            if !l.w.iter().chain(&l.b).all(|v| v.is_finite()) {
                return Err(Error::TrainingFailure(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { variant, classes, layers })
    }

    fn check_widths(variant: FusionVariant, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::config("fusion needs at least 2 classes"));
        }
        match variant {
            FusionVariant::Residual { hidden: 0 } | FusionVariant::Bottleneck { width: 0 } => {
                Err(Error::config("fusion widths must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn variant(&self) -> FusionVariant {
        self.variant
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// The same head with every parameter rounded to `f32`, i.e. exactly what
    /// survives serialization.
    pub fn quantized(&self) -> Self {
        let mut h = self.clone();
        for p in h.params_mut() {
            *p = *p as f32 as f64;
        }
        h
    }

    fn forward_tape(&self, tape: &mut Tape) {
        let c = self.classes;
        let l = &self.layers;
        match self.variant {
            FusionVariant::Basic => l[0].apply(&tape.z, &mut tape.y),
            FusionVariant::Residual { .. } => {
                l[0].apply(&tape.z, &mut tape.a);
                relu(&mut tape.a);
                l[1].apply(&tape.a, &mut tape.t_pre);
                l[2].apply(&tape.z, &mut tape.b);
                for (t, s) in tape.t_pre.iter_mut().zip(&tape.b) {
                    *t += s;
                }
                tape.t.clone_from(&tape.t_pre);
                relu(&mut tape.t);
                l[3].apply(&tape.t, &mut tape.y);
            }
            FusionVariant::Bottleneck { .. } => {
                l[0].apply(&tape.z[..c], &mut tape.a);
                l[1].apply(&tape.z[c..], &mut tape.b);
                tape.s.clear();
                tape.s.extend(tape.a.iter().zip(&tape.b).map(|(a, b)| a + b));
                l[2].apply(&tape.s, &mut tape.m);
                relu(&mut tape.m);
                l[3].apply(&tape.m, &mut tape.t_pre);
                for (t, s) in tape.t_pre.iter_mut().zip(&tape.s) {
                    *t += s;
                }
                tape.t.clone_from(&tape.t_pre);
                relu(&mut tape.t);
                l[4].apply(&tape.t, &mut tape.y);
            }
        }
    }

    /// Backward for one pixel whose forward values sit in `tape`; adds into
    /// `g` and `dz` (length `2C`).
    fn backward_tape(&self, tape: &Tape, dy: &[f64], g: &mut [Linear], dz: &mut [f64]) {
        let c = self.classes;
        let l = &self.layers;
        match self.variant {
            FusionVariant::Basic => l[0].backward(&tape.z, dy, &mut g[0], Some(dz)),
            FusionVariant::Residual { hidden } => {
                let mut dt = vec![0.0; hidden];
                l[3].backward(&tape.t, dy, &mut g[3], Some(&mut dt));
                relu_grad(&tape.t_pre, &mut dt);
                // tape.a holds ReLU(L_in z); its positives mark the open units
                let mut dh = vec![0.0; hidden];
                l[1].backward(&tape.a, &dt, &mut g[1], Some(&mut dh));
                l[2].backward(&tape.z, &dt, &mut g[2], Some(&mut *dz));
                relu_grad(&tape.a, &mut dh);
                l[0].backward(&tape.z, &dh, &mut g[0], Some(dz));
            }
            FusionVariant::Bottleneck { width } => {
                let d = BOTTLENECK_EXPANSION * width;
                let mut dt = vec![0.0; d];
                l[4].backward(&tape.t, dy, &mut g[4], Some(&mut dt));
                relu_grad(&tape.t_pre, &mut dt);
                let mut dm = vec![0.0; width];
                l[3].backward(&tape.m, &dt, &mut g[3], Some(&mut dm));
                relu_grad(&tape.m, &mut dm);
                let mut ds = dt;
                l[2].backward(&tape.s, &dm, &mut g[2], Some(&mut ds));
                let (dp, dn) = dz.split_at_mut(c);
                l[0].backward(&tape.z[..c], &ds, &mut g[0], Some(dp));
                l[1].backward(&tape.z[c..], &ds, &mut g[1], Some(dn));
            }
        }
    }

    /// Fused logits for one pixel.
    pub fn forward_pixel(&self, propagated: &[f64], native: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        tape.z.extend_from_slice(propagated);
        tape.z.extend_from_slice(native);
        self.forward_tape(&mut tape);
        tape.y
    }

    pub fn to_blob(&self) -> HeadBlob {
        let (variant_tag, width) = self.variant.tag_and_width();
        HeadBlob {
            variant_tag,
            hidden: width as u32,
            classes: self.classes as u32,
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        l.out as u32,
                        l.inp as u32,
                        l.w.iter().map(|&v| v as f32).collect(),
                        l.b.iter().map(|&v| v as f32).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn from_blob(blob: &HeadBlob) -> Result<Self> {
        let width = blob.hidden as usize;
        let variant = match blob.variant_tag {
            0 => FusionVariant::Basic,
            1 => FusionVariant::Residual { hidden: width },
            2 => FusionVariant::Bottleneck { width },
            t => return Err(Error::format("SEMSHARE head", format!("unknown variant tag {t}"))),
        };
        let layers = blob
            .layers
            .iter()
            .map(|(o, i, w, b)| Linear {
                out: *o as usize,
                inp: *i as usize,
                w: w.iter().map(|&v| v as f64).collect(),
                b: b.iter().map(|&v| v as f64).collect(),
            })
            .collect();
        Self::from_layers(variant, blob.classes as usize, layers)
            .map_err(|e| Error::format("SEMSHARE head", e.to_string()))
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_head_container(w, &self.to_blob())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        Self::from_blob(&read_head_container(r)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::read(path)?.as_slice())
    }
}

fn check_inputs(head: &FusionHead, propagated: &ScoreMap, native: &ScoreMap, mask: &Mask) -> Result<()> {
    same_size("fusion: propagated vs native", propagated.size(), native.size())?;
    same_size("fusion: mask", mask.size(), native.size())?;
    if propagated.classes() != head.classes || native.classes() != head.classes {
        return Err(Error::dim(format!(
            "fusion head has {} classes, inputs have {} and {}",
            head.classes,
            propagated.classes(),
            native.classes()
        )));
    }
    Ok(())
}

fn load_pixel(tape: &mut Tape, propagated: &ScoreMap, native: &ScoreMap, i: usize) {
    let c = propagated.classes();
    tape.z.clear();
    tape.z.extend((0..c).map(|k| propagated.get(k, i) as f64));
    tape.z.extend((0..c).map(|k| native.get(k, i) as f64));
}

/// Fused logits in full precision, planar `C × N`.
pub fn fuse_logits(head: &FusionHead, propagated: &ScoreMap, native: &ScoreMap, mask: &Mask) -> Result<Vec<f64>> {
    check_inputs(head, propagated, native, mask)?;
    let n = native.size().area();
    let c = head.classes;
    let mut out = vec![0.0; c * n];
    let mut tape = Tape::default();
    for i in 0..n {
        if !mask.data()[i] {
            for k in 0..c {
                out[k * n + i] = native.get(k, i) as f64;
            }
            continue;
        }
        load_pixel(&mut tape, propagated, native, i);
        head.forward_tape(&mut tape);
        for k in 0..c {
            out[k * n + i] = tape.y[k];
        }
    }
    Ok(out)
}

pub fn fuse_forward(head: &FusionHead, propagated: &ScoreMap, native: &ScoreMap, mask: &Mask) -> Result<ScoreMap> {
    let logits = fuse_logits(head, propagated, native, mask)?;
    let n = native.size().area();
    let data: Vec<f32> = logits
        .iter()
        .enumerate()
        .map(|(j, &v)| if mask.data()[j % n] { v as f32 } else { native.data()[j] })
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingFailure("fusion produced non-finite scores".into()));
    }
    ScoreMap::new(native.size(), head.classes, data)
}

/// Gradients of `Σ grad_out · fuse_logits(..)`; `grad_out` is planar `C × N`.
pub fn fuse_backward(
    head: &FusionHead,
    propagated: &ScoreMap,
    native: &ScoreMap,
    mask: &Mask,
    grad_out: &[f64],
) -> Result<FusionGrads> {
    check_inputs(head, propagated, native, mask)?;
    let n = native.size().area();
    let c = head.classes;
    if grad_out.len() != c * n {
        return Err(Error::dim(format!("grad_out has {} values, expected {}", grad_out.len(), c * n)));
    }
    let mut grads = FusionGrads {
        layers: head.layers.iter().map(|l| Linear::zeros(l.out, l.inp)).collect(),
        propagated: vec![0.0; c * n],
        native: vec![0.0; c * n],
    };
    let mut tape = Tape::default();
    let mut dy = vec![0.0; c];
    let mut dz = vec![0.0; 2 * c];
    for i in 0..n {
        if !mask.data()[i] {
            for k in 0..c {
                grads.native[k * n + i] = grad_out[k * n + i];
            }
            continue;
        }
        for k in 0..c {
            dy[k] = grad_out[k * n + i];
        }
        load_pixel(&mut tape, propagated, native, i);
        head.forward_tape(&mut tape);
        dz.iter_mut().for_each(|v| *v = 0.0);
        head.backward_tape(&tape, &dy, &mut grads.layers, &mut dz);
        for k in 0..c {
            grads.propagated[k * n + i] = dz[k];
            grads.native[k * n + i] = dz[c + k];
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
