//! Seeded multi-octave value noise.

use crate::raster::{Image, Size};

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of `octaves` value-noise layers; `period` is the lattice spacing of
/// the coarsest layer in input units. Output in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNoise {
    pub seed: u64,
    pub period: f64,
    pub octaves: u32,
}

impl ValueNoise {
    pub fn new(seed: u64, period: f64, octaves: u32) -> Self {
        Self { seed, period, octaves: octaves.max(1) }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / self.period;
        for o in 0..self.octaves {
            let seed = splitmix(self.seed.wrapping_add(o as u64));
            let (fx, fy) = (x * freq, y * freq);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (tx, ty) = (smoothstep(fx - x0), smoothstep(fy - y0));
            let (ix, iy) = (x0 as i64, y0 as i64);
            let a = lattice(seed, ix, iy);
            let b = lattice(seed, ix + 1, iy);
            let c = lattice(seed, ix, iy + 1);
            let d = lattice(seed, ix + 1, iy + 1);
            total += amp * ((1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d));
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        total / norm
    }
}

/// Gray textured frame with intensities in `[0.1, 0.9]`.
pub fn textured_frame(size: Size, seed: u64) -> Image {
    let noise = ValueNoise::new(seed, 24.0, 4);
    Image::from_fn(size, |x, y| (0.1 + 0.8 * noise.sample(x as f64, y as f64)) as f32)
        .expect("noise is in range")
}
