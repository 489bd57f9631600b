//! Plain SGD on per-pixel softmax cross-entropy.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, load_pixel, FusionHead, Linear, Tape};
use crate::error::{Error, Result};
use crate::raster::{same_size, LabelMap, Mask, ScoreMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Fraction of a frame's trainable pixels drawn for each step.
    pub subsample: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, iterations: 2000, subsample: 0.25, seed: 0, init_scale: 0.1 }
    }
}

impl TrainConfig {
    /// Settings used by the benchmark suites. The defaults above barely move
    /// a freshly initialized head in 2000 steps on score-valued inputs; this
    /// preset starts from unit-scale weights and takes larger steps.
    pub fn benchmark() -> Self {
        Self { learning_rate: 0.5, init_scale: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if self.iterations < 1 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::config("subsample fraction must be in (0, 1]"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("init scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One training frame. Only pixels inside `mask` are fused, so only those
/// contribute to the loss.
#[derive(Debug, Clone)]
pub struct FusionSample {
    pub propagated: ScoreMap,
    pub native: ScoreMap,
    pub mask: Mask,
    pub gt: LabelMap,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: FusionHead,
    /// Mini-batch loss measured before each update.
    pub losses: Vec<f64>,
}

/// Frames are visited round-robin, one per step; each step draws
/// `max(1, round(subsample · n))` of that frame's trainable pixels.
pub fn train_fusion(head: &FusionHead, data: &[FusionSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut pixel_lists = Vec::with_capacity(data.len());
    for (k, s) in data.iter().enumerate() {
        check_inputs(head, &s.propagated, &s.native, &s.mask)?;
        same_size("training labels", s.gt.size(), s.native.size())?;
        if s.gt.classes() > head.classes() {
            return Err(Error::dim(format!("frame {k}: labels have more classes than the head")));
        }
        pixel_lists.push((0..s.mask.size().area()).filter(|&i| s.mask.data()[i]).collect::<Vec<_>>());
    }
    let frames: Vec<usize> = (0..data.len()).filter(|&k| !pixel_lists[k].is_empty()).collect();
    if frames.is_empty() {
        return Err(Error::config("training set has no pixels inside its fusion masks"));
    }

    let mut head = head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = head.classes();
    let mut grads: Vec<Linear> = head.layers.iter().map(|l| Linear::zeros(l.out, l.inp)).collect();
    let mut tape = Tape::default();
    let mut dy = vec![0.0; c];
    let mut dz = vec![0.0; 2 * c];
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let k = frames[it % frames.len()];
        let (s, pixels) = (&data[k], &pixel_lists[k]);
        let n = pixels.len();
        let take = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
        let batch: Vec<usize> = if take == n {
            pixels.clone()
        } else {
            let mut idx = sample(&mut rng, n, take).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| pixels[j]).collect()
        };
        for g in &mut grads {
            g.w.iter_mut().chain(g.b.iter_mut()).for_each(|v| *v = 0.0);
        }
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in &batch {
            load_pixel(&mut tape, &s.propagated, &s.native, i);
            head.forward_tape(&mut tape);
            let label = s.gt.data()[i] as usize;
            let m = tape.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = tape.y.iter().map(|v| (v - m).exp()).sum();
            loss += (m + z.ln() - tape.y[label]) * inv;
            for (j, d) in dy.iter_mut().enumerate() {
                let p = (tape.y[j] - m).exp() / z;
                *d = (p - if j == label { 1.0 } else { 0.0 }) * inv;
            }
            dz.iter_mut().for_each(|v| *v = 0.0);
            head.backward_tape(&tape, &dy, &mut grads, &mut dz);
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFailure(format!("loss became non-finite at step {it}")));
        }
        losses.push(loss);
        for (p, g) in head.params_mut().zip(grads.iter().flat_map(|g| g.w.iter().chain(&g.b))) {
            *p -= cfg.learning_rate * g;
        }
        if head.params().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure(format!("parameters became non-finite at step {it}")));
        }
    }
    Ok(TrainOutcome { head, losses })
}
