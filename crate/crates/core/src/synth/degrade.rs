//! Imperfect "network output" score maps synthesized from ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, ScoreMap, Size};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    /// Logit given to the true class before blur and noise.
    pub margin: f64,
    /// Standard deviation of the additive per-logit Gaussian noise.
    pub sigma: f64,
    /// Box-blur radius applied to the one-hot logits, pixels.
    pub blur_radius: usize,
}

impl DegradeSpec {
    pub fn clean() -> Self {
        Self { margin: 1.0, sigma: 0.0, blur_radius: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) || !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("degrade margin must be > 0 and sigma >= 0"));
        }
        Ok(())
    }
}

fn box_blur(plane: &[f64], size: Size, r: usize) -> Vec<f64> {
    if r == 0 {
        return plane.to_vec();
    }
    let (w, h) = (size.width, size.height);
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        let (n_lines, len) = if horizontal { (h, w) } else { (w, h) };
        for line in 0..n_lines {
            let at = |k: usize| if horizontal { line * w + k } else { k * w + line };
            for k in 0..len {
                let lo = k.saturating_sub(r);
                let hi = (k + r).min(len - 1);
                let sum: f64 = (lo..=hi).map(|j| src[at(j)]).sum();
                out[at(k)] = sum / (hi - lo + 1) as f64;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

pub fn degrade_scores(gt: &LabelMap, spec: &DegradeSpec, seed: u64) -> Result<ScoreMap> {
    spec.validate()?;
    let size = gt.size();
    let classes = gt.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (spec.sigma > 0.0).then(|| Normal::new(0.0, spec.sigma).expect("sigma validated"));
    let mut data = Vec::with_capacity(size.area() * classes);
    for c in 0..classes {
        let onehot: Vec<f64> =
            gt.data().iter().map(|&l| if l as usize == c { spec.margin } else { 0.0 }).collect();
        for v in box_blur(&onehot, size, spec.blur_radius) {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            data.push((v + n) as f32);
        }
    }
    ScoreMap::new(size, classes, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::miou;
    use crate::raster::Mask;
    use rand::Rng;

    fn stripes(size: Size, classes: usize) -> LabelMap {
        LabelMap::from_fn(size, classes, |x, y| (((x / 11) + 2 * (y / 17)) % classes) as u8).unwrap()
    }

    #[test]
    fn clean_spec_recovers_labels() {
        let gt = stripes(Size::new(40, 30), 6);
        let s = degrade_scores(&gt, &DegradeSpec::clean(), 0).unwrap();
        assert_eq!(s.argmax(), gt);
        let full = Mask::full(gt.size());
        assert_eq!(miou(&s.argmax(), &gt, &full, 6).unwrap().mean_iou, 1.0);
    }

    #[test]
    fn heavy_noise_reaches_chance_level() {
        let size = Size::new(128, 128);
        let gt = stripes(size, 6);
        let full = Mask::full(size);
        // oracle: labels drawn uniformly at random, independent of the model
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut oracle = 0.0;
        for _ in 0..4 {
            let rand_labels = LabelMap::from_fn(size, 6, |_, _| rng.random_range(0..6u8)).unwrap();
            oracle += miou(&rand_labels, &gt, &full, 6).unwrap().mean_iou / 4.0;
        }
        let spec = DegradeSpec { margin: 1.0, sigma: 5.0, blur_radius: 0 };
        let noisy = degrade_scores(&gt, &spec, 7).unwrap();
        let got = miou(&noisy.argmax(), &gt, &full, 6).unwrap().mean_iou;
        assert!((got - oracle).abs() < 0.1, "{got} vs oracle {oracle}");
        assert!((got - 1.0 / 6.0).abs() < 0.1);
    }

    #[test]
    fn same_seed_same_scores() {
        let gt = stripes(Size::new(24, 24), 4);
        let spec = DegradeSpec { margin: 2.0, sigma: 0.7, blur_radius: 2 };
        assert_eq!(degrade_scores(&gt, &spec, 3).unwrap(), degrade_scores(&gt, &spec, 3).unwrap());
        assert_ne!(degrade_scores(&gt, &spec, 3).unwrap(), degrade_scores(&gt, &spec, 4).unwrap());
    }

    #[test]
    fn blur_softens_only_near_edges() {
        let size = Size::new(20, 4);
        let gt = LabelMap::from_fn(size, 2, |x, _| (x >= 10) as u8).unwrap();
        let spec = DegradeSpec { margin: 1.0, sigma: 0.0, blur_radius: 2 };
        let s = degrade_scores(&gt, &spec, 0).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 15), 1.0);
        assert!((s.get(1, 9) - 0.4).abs() < 1e-6);
        assert_eq!(s.argmax(), gt);
    }
}
