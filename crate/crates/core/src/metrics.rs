//! Flow, photometric and segmentation metrics.
//!
//! Every mean is taken over the pixels selected by a validity mask and
//! summed with a fixed pairwise tree, so results are bit-reproducible.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::raster::{same_size, FlowField, Image, LabelMap, Mask, ScoreMap, Size};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Pairwise (tree) summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean_or_undefined(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric(format!("{what}: empty mask")));
    }
    Ok(pairwise_sum(values) / values.len() as f64)
}

fn check_mask(what: &str, size: Size, mask: &Mask) -> Result<()> {
    same_size(what, size, mask.size())
}

/// Weights of the unsupervised flow loss `w1·L1 + w2·L_SSIM + w3·L_smooth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w1: 0.1, w2: 1.0, w3: 1.0 }
    }
}

impl LossWeights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        if [w1, w2, w3].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(Self { w1, w2, w3 })
    }

    pub fn combine(&self, l1: f64, ssim_loss: f64, smooth: f64) -> LossBreakdown {
        LossBreakdown {
            l1,
            ssim: ssim_loss,
            smooth,
            total: self.w1 * l1 + self.w2 * ssim_loss + self.w3 * smooth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    /// `(1 - SSIM) / 2`.
    pub ssim: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Average end-point error over the masked pixels.
pub fn aepe(gt: &FlowField, est: &FlowField, mask: &Mask) -> Result<f64> {
    same_size("aepe", gt.size(), est.size())?;
    check_mask("aepe mask", gt.size(), mask)?;
    let errs: Vec<f64> = gt
        .data()
        .iter()
        .zip(est.data())
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|((g, e), _)| (g[0] as f64 - e[0] as f64).hypot(g[1] as f64 - e[1] as f64))
        .collect();
    mean_or_undefined(&errs, "aepe")
}

/// Mean over masked pixels of the channel-summed absolute difference.
pub fn l1_photometric(gt: &Image, warped: &Image, mask: &Mask) -> Result<f64> {
    same_size("l1", gt.size(), warped.size())?;
    if gt.channels() != warped.channels() {
        return Err(Error::dim("l1: channel count differs"));
    }
    check_mask("l1 mask", gt.size(), mask)?;
    let vals: Vec<f64> = (0..gt.size().area())
        .filter(|&i| mask.data()[i])
        .map(|i| {
            (0..gt.channels())
                .map(|c| (gt.plane(c)[i] as f64 - warped.plane(c)[i] as f64).abs())
                .sum()
        })
        .collect();
    mean_or_undefined(&vals, "l1")
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Gaussian-weighted local statistics over fully contained windows; output
/// is indexed by window center.
fn local_mean(data: &[f64], size: Size, win: &[f64; SSIM_WINDOW]) -> (Size, Vec<f64>) {
    let out_size = Size::new(size.width + 1 - SSIM_WINDOW, size.height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; out_size.width * size.height];
    for y in 0..size.height {
        for x in 0..out_size.width {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * data[y * size.width + x + k];
            }
            rows[y * out_size.width + x] = acc;
        }
    }
    let mut out = vec![0.0; out_size.area()];
    for y in 0..out_size.height {
        for x in 0..out_size.width {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * rows[(y + k) * out_size.width + x];
            }
            out[y * out_size.width + x] = acc;
        }
    }
    (out_size, out)
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5) on `[0, 1]` intensities.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_masked(a, b, &Mask::full(a.size()))
}

/// Mean SSIM over windows whose center pixel is in `mask`.
pub fn ssim_masked(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    same_size("ssim", a.size(), b.size())?;
    check_mask("ssim mask", a.size(), mask)?;
    let size = a.size();
    if size.width < SSIM_WINDOW || size.height < SSIM_WINDOW {
        return Err(Error::config(format!("ssim: image {size} smaller than the {SSIM_WINDOW}px window")));
    }
    let to64 = |img: &Image| img.to_mean_gray().data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let (xa, xb) = (to64(a), to64(b));
    let win = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (osz, mu_a) = local_mean(&xa, size, &win);
    let (_, mu_b) = local_mean(&xb, size, &win);
    let (_, e_aa) = local_mean(&prod(&xa, &xa), size, &win);
    let (_, e_bb) = local_mean(&prod(&xb, &xb), size, &win);
    let (_, e_ab) = local_mean(&prod(&xa, &xb), size, &win);
    let r = SSIM_WINDOW / 2;
    let mut vals = Vec::with_capacity(osz.area());
    for y in 0..osz.height {
        for x in 0..osz.width {
            if !mask.get(x + r, y + r) {
                continue;
            }
            let i = y * osz.width + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            vals.push(num / den);
        }
    }
    mean_or_undefined(&vals, "ssim")
}

pub fn ssim_loss(ssim_value: f64) -> f64 {
    (1.0 - ssim_value) / 2.0
}

/// First-order L1 smoothness: each of the four partial-derivative terms is
/// averaged over the pixels where its forward difference exists.
pub fn smoothness(flow: &FlowField) -> Result<f64> {
    let s = flow.size();
    if s.width < 2 || s.height < 2 {
        return Err(Error::config(format!("smoothness: flow {s} smaller than 2x2")));
    }
    let d = flow.data();
    let mut total = 0.0;
    for comp in 0..2 {
        let mut dx = Vec::with_capacity((s.width - 1) * s.height);
        let mut dy = Vec::with_capacity(s.width * (s.height - 1));
        for y in 0..s.height {
            for x in 0..s.width {
                let i = s.index(x, y);
                if x + 1 < s.width {
                    dx.push((d[i + 1][comp] as f64 - d[i][comp] as f64).abs());
                }
                if y + 1 < s.height {
                    dy.push((d[i + s.width][comp] as f64 - d[i][comp] as f64).abs());
                }
            }
        }
        total += pairwise_sum(&dx) / dx.len() as f64 + pairwise_sum(&dy) / dy.len() as f64;
    }
    Ok(total)
}

/// `w1·L1 + w2·(1 - SSIM)/2 + w3·L_smooth`, with L1 and SSIM restricted to
/// the mask.
pub fn unsupervised_loss(
    gt: &Image,
    warped: &Image,
    flow: &FlowField,
    weights: &LossWeights,
    mask: &Mask,
) -> Result<LossBreakdown> {
    same_size("unsupervised loss: flow", flow.size(), gt.size())?;
    let l1 = l1_photometric(gt, warped, mask)?;
    let s = ssim_masked(gt, warped, mask)?;
    let smooth = smoothness(flow)?;
    Ok(weights.combine(l1, ssim_loss(s), smooth))
}

/// Numerically stable `-log softmax(scores)[label]` at one pixel.
pub fn pixel_cross_entropy(scores: &[f64], label: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[label]
}

/// Mean per-pixel cross-entropy over the mask.
pub fn cross_entropy(scores: &ScoreMap, labels: &LabelMap, mask: &Mask) -> Result<f64> {
    same_size("cross entropy", scores.size(), labels.size())?;
    check_mask("cross entropy mask", scores.size(), mask)?;
    if labels.classes() > scores.classes() {
        return Err(Error::dim("cross entropy: labels have more classes than scores"));
    }
    let c = scores.classes();
    let mut buf = vec![0.0f64; c];
    let vals: Vec<f64> = (0..scores.size().area())
        .filter(|&i| mask.data()[i])
        .map(|i| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = scores.get(k, i) as f64;
            }
            pixel_cross_entropy(&buf, labels.data()[i] as usize)
        })
        .collect();
    mean_or_undefined(&vals, "cross entropy")
}

/// Entry `(g, p)` counts pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, mask: &Mask) -> Result<()> {
        same_size("confusion: pred vs gt", pred.size(), gt.size())?;
        check_mask("confusion mask", gt.size(), mask)?;
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if !m {
                continue;
            }
            if p as usize >= self.classes || g as usize >= self.classes {
                return Err(Error::InvalidRaster(format!(
                    "label {} out of range for {} classes",
                    p.max(g),
                    self.classes
                )));
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)`; `None` when the class appears in neither map.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fn_: u64 = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
        let fp: u64 = (0..self.classes).map(|g| self.get(g, c)).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn report(&self) -> Result<EvalReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("miou: empty mask".into()));
        }
        let per_class: Vec<Option<f64>> = (0..self.classes).map(|c| self.iou(c)).collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(EvalReport {
            per_class_iou: per_class,
            mean_iou: pairwise_sum(&present) / present.len() as f64,
            pixels: total as usize,
            aepe: None,
            losses: None,
        })
    }
}

/// Mean IoU over the classes present in either map.
pub fn miou(pred: &LabelMap, gt: &LabelMap, mask: &Mask, num_classes: usize) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.accumulate(pred, gt, mask)?;
    cm.report()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `None` marks classes absent from both prediction and truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    /// Evaluated pixel count.
    pub pixels: usize,
    /// `(value, evaluated pixels)`.
    pub aepe: Option<(f64, usize)>,
    pub losses: Option<LossBreakdown>,
}

impl EvalReport {
    /// Flat `key = value` text.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("miou", self.mean_iou);
        doc.push("pixels", self.pixels);
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => doc.push(format!("iou.{c}"), v),
                None => doc.push(format!("iou.{c}"), "absent"),
            }
        }
        if let Some((v, n)) = self.aepe {
            doc.push("aepe", v);
            doc.push("aepe.pixels", n);
        }
        if let Some(l) = self.losses {
            doc.push("loss.l1", l.l1);
            doc.push("loss.ssim", l.ssim);
            doc.push("loss.smooth", l.smooth);
            doc.push("loss.total", l.total);
        }
        doc
    }

    /// One metric per line: `name<TAB>value<TAB>N`.
    pub fn to_metric_lines(&self) -> String {
        let mut out = String::new();
        let n = self.pixels;
        let _ = writeln!(out, "miou\t{}\t{n}", self.mean_iou);
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => {
                    let _ = writeln!(out, "iou.{c}\t{v}\t{n}");
                }
                None => {
                    let _ = writeln!(out, "iou.{c}\tabsent\t{n}");
                }
            }
        }
        if let Some((v, an)) = self.aepe {
            let _ = writeln!(out, "aepe\t{v}\t{an}");
        }
        if let Some(l) = self.losses {
            for (k, v) in [("loss.l1", l.l1), ("loss.ssim", l.ssim), ("loss.smooth", l.smooth), ("loss.total", l.total)] {
                let _ = writeln!(out, "{k}\t{v}\t{n}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(w: usize, h: usize) -> Size {
        Size::new(w, h)
    }

    #[test]
    fn aepe_examples() {
        let size = s(6, 4);
        let gt = FlowField::from_fn(size, |x, y| [x as f32 * 0.5, y as f32 - 1.0]).unwrap();
        let full = Mask::full(size);
        assert_eq!(aepe(&gt, &gt, &full).unwrap(), 0.0);
        let off = FlowField::from_fn(size, |x, y| {
            let g = gt.get(x, y);
            [g[0] + 3.0, g[1] + 4.0]
        })
        .unwrap();
        assert_eq!(aepe(&gt, &off, &full).unwrap(), 5.0);
        let half = FlowField::from_fn(size, |x, y| {
            let g = gt.get(x, y);
            if x < 3 { [g[0], g[1] + 2.0] } else { g }
        })
        .unwrap();
        assert_eq!(aepe(&gt, &half, &full).unwrap(), 1.0);
        // restricting the mask to the offset half recomputes the mean over it
        let left = Mask::from_fn(size, |x, _| x < 3);
        assert_eq!(aepe(&gt, &half, &left).unwrap(), 2.0);
        assert!(matches!(aepe(&gt, &gt, &Mask::empty(size)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn l1_examples() {
        let size = s(10, 10);
        let a = Image::constant(size, 1, 0.2).unwrap();
        let b = Image::constant(size, 1, 0.5).unwrap();
        let full = Mask::full(size);
        assert_eq!(l1_photometric(&a, &a, &full).unwrap(), 0.0);
        assert!((l1_photometric(&a, &b, &full).unwrap() - 0.3).abs() < 1e-7);
        let z = Image::constant(size, 1, 0.0).unwrap();
        let one = Image::from_fn(size, |x, y| if x == 3 && y == 7 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(l1_photometric(&z, &one, &full).unwrap(), 0.01);
        assert!(l1_photometric(&a, &b, &Mask::empty(size)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let size = s(16, 14);
        let img = Image::from_fn(size, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0).unwrap();
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
        let zero = Image::constant(size, 1, 0.0).unwrap();
        let one = Image::constant(size, 1, 1.0).unwrap();
        let want = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zero, &one).unwrap() - want).abs() < 1e-9);
        let small = Image::constant(s(10, 20), 1, 0.5).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::Config(_))));
    }

    #[test]
    fn smoothness_examples() {
        let size = s(4, 4);
        assert_eq!(smoothness(&FlowField::uniform(size, 1.5, -2.0)).unwrap(), 0.0);
        let ramp = FlowField::from_fn(size, |x, _| [x as f32, 0.0]).unwrap();
        assert_eq!(smoothness(&ramp).unwrap(), 1.0);
        let checker = FlowField::from_fn(size, |x, y| [((x + y) % 2) as f32, 0.0]).unwrap();
        assert_eq!(smoothness(&checker).unwrap(), 2.0);
        assert!(smoothness(&FlowField::zeros(s(1, 5))).is_err());
    }

    #[test]
    fn unsupervised_examples() {
        let w = LossWeights::default();
        assert!((w.combine(0.3, 0.2, 0.05).total - 0.28).abs() < 1e-12);
        let size = s(12, 12);
        let img = Image::from_fn(size, |x, y| ((x * y) % 5) as f32 / 4.0).unwrap();
        let zero = FlowField::zeros(size);
        let l = unsupervised_loss(&img, &img, &zero, &w, &Mask::full(size)).unwrap();
        assert_eq!(l.total, 0.0);
        let other = Image::constant(size, 1, 0.9).unwrap();
        let ramp = FlowField::from_fn(size, |x, _| [x as f32, 0.0]).unwrap();
        let zw = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(unsupervised_loss(&img, &other, &ramp, &zw, &Mask::full(size)).unwrap().total, 0.0);
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let size = s(3, 2);
        let labels = LabelMap::from_fn(size, 4, |x, y| ((x + y) % 4) as u8).unwrap();
        let full = Mask::full(size);
        let zeros = ScoreMap::zeros(size, 4).unwrap();
        assert!((cross_entropy(&zeros, &labels, &full).unwrap() - 4f64.ln()).abs() < 1e-9);
        let confident = ScoreMap::one_hot(&labels, 20.0);
        assert!(cross_entropy(&confident, &labels, &full).unwrap() < 1e-8);
        let shifted = ScoreMap::new(size, 4, confident.data().iter().map(|v| v + 7.0).collect()).unwrap();
        let d = cross_entropy(&shifted, &labels, &full).unwrap() - cross_entropy(&confident, &labels, &full).unwrap();
        assert!(d.abs() < 1e-9);
        let huge = ScoreMap::new(size, 4, (0..24).map(|i| if i % 2 == 0 { 1e4 } else { -1e4 }).collect()).unwrap();
        assert!(cross_entropy(&huge, &labels, &full).unwrap().is_finite());
        assert!(cross_entropy(&zeros, &labels, &Mask::empty(size)).is_err());
    }

    #[test]
    fn miou_examples() {
        let size = s(2, 2);
        let full = Mask::full(size);
        let gt = LabelMap::new(size, 2, vec![0, 0, 1, 1]).unwrap();
        let r = miou(&gt, &gt, &full, 2).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        let pred = LabelMap::new(size, 2, vec![0, 0, 0, 0]).unwrap();
        let r = miou(&pred, &gt, &full, 2).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.mean_iou, 0.25);
        let all0 = LabelMap::new(size, 2, vec![0; 4]).unwrap();
        let all1 = LabelMap::new(size, 2, vec![1; 4]).unwrap();
        assert_eq!(miou(&all1, &all0, &full, 2).unwrap().mean_iou, 0.0);
        // an absent class is flagged and excluded
        let r = miou(&gt, &gt, &full, 3).unwrap();
        assert_eq!(r.per_class_iou[2], None);
        assert_eq!(r.mean_iou, 1.0);
        // half mask: only the first row (both gt 0, both predicted 0)
        let top = Mask::from_fn(size, |_, y| y == 0);
        assert_eq!(miou(&pred, &gt, &top, 2).unwrap().mean_iou, 1.0);
        assert_eq!(miou(&pred, &gt, &top, 2).unwrap().pixels, 2);
    }

    #[test]
    fn report_text_forms() {
        let size = s(2, 2);
        let gt = LabelMap::new(size, 3, vec![0, 0, 1, 1]).unwrap();
        let mut r = miou(&gt, &gt, &Mask::full(size), 3).unwrap();
        r.aepe = Some((0.5, 4));
        let kv = r.to_kv();
        assert_eq!(kv.get("iou.2"), Some("absent"));
        assert!(r.to_metric_lines().contains("aepe\t0.5\t4\n"));
    }

    proptest! {
        #[test]
        fn aepe_symmetric_nonnegative(a in prop::collection::vec(-10.0f32..10.0, 24), b in prop::collection::vec(-10.0f32..10.0, 24)) {
            let size = s(4, 3);
            let fa = FlowField::new(size, a.chunks(2).map(|c| [c[0], c[1]]).collect()).unwrap();
            let fb = FlowField::new(size, b.chunks(2).map(|c| [c[0], c[1]]).collect()).unwrap();
            let m = Mask::full(size);
            let ab = aepe(&fa, &fb, &m).unwrap();
            prop_assert_eq!(ab, aepe(&fb, &fa, &m).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(aepe(&fa, &fa, &m).unwrap(), 0.0);
        }

        #[test]
        fn ssim_symmetric(a in prop::collection::vec(0.0f32..1.0, 144), b in prop::collection::vec(0.0f32..1.0, 144)) {
            let size = s(12, 12);
            let ia = Image::new(size, 1, a).unwrap();
            let ib = Image::new(size, 1, b).unwrap();
            prop_assert!((ssim(&ia, &ib).unwrap() - ssim(&ib, &ia).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn miou_permutation_equivariant(p in prop::collection::vec(0u8..4, 20), g in prop::collection::vec(0u8..4, 20), perm_seed in 0usize..24) {
            let size = s(5, 4);
            let mut perm = [0u8, 1, 2, 3];
            // enumerate the 24 permutations deterministically
            let mut k = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, k % (i + 1));
                k /= i + 1;
            }
            let pm = |v: &[u8]| LabelMap::new(size, 4, v.iter().map(|&l| perm[l as usize]).collect()).unwrap();
            let m = Mask::full(size);
            let a = miou(&LabelMap::new(size, 4, p.clone()).unwrap(), &LabelMap::new(size, 4, g.clone()).unwrap(), &m, 4).unwrap();
            let b = miou(&pm(&p), &pm(&g), &m, 4).unwrap();
            prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
        }
    }
}
