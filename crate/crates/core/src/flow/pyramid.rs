use crate::raster::Size;

/// Binomial 5-tap kernel applied per axis before decimation.
pub const SMOOTH_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Dense single-channel f64 plane used inside the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub size: Size,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(size: Size, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), size.area());
        Self { size, data }
    }

    pub fn filled(size: Size, v: f64) -> Self {
        Self { size, data: vec![v; size.area()] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.size.width + x]
    }

    /// Replicate-border lookup.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.size.width as isize - 1) as usize;
        let yc = y.clamp(0, self.size.height as isize - 1) as usize;
        self.at(xc, yc)
    }

    /// Separable binomial smoothing with replicated borders.
    pub fn smoothed(&self) -> Plane {
        let Size { width: w, height: h } = self.size;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in SMOOTH_KERNEL.iter().enumerate() {
                    acc += wk * self.at_clamped(x as isize + k as isize - 2, y as isize);
                }
                tmp[y * w + x] = acc;
            }
        }
        let tmp = Plane::new(self.size, tmp);
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wk) in SMOOTH_KERNEL.iter().enumerate() {
                    acc += wk * tmp.at_clamped(x as isize, y as isize + k as isize - 2);
                }
                out[y * w + x] = acc;
            }
        }
        Plane::new(self.size, out)
    }

    /// Smooth, then keep every second pixel. The coarse pixel `(i, j)` sits
    /// at fine coordinate `(2i, 2j)`.
    pub fn downsampled(&self, target: Size) -> Plane {
        let s = self.smoothed();
        let mut out = Vec::with_capacity(target.area());
        for j in 0..target.height {
            for i in 0..target.width {
                out.push(s.at_clamped(2 * i as isize, 2 * j as isize));
            }
        }
        Plane::new(target, out)
    }
}

/// Side length of the next coarser level: `round(side * 0.5)`.
pub fn coarser(size: Size) -> Size {
    Size::new(
        (size.width as f64 * 0.5).round() as usize,
        (size.height as f64 * 0.5).round() as usize,
    )
}

/// Level sizes from finest to coarsest, stopping before any side would drop
/// below `min_side`.
pub fn level_sizes(size: Size, max_levels: usize, min_side: usize) -> Vec<Size> {
    let mut sizes = vec![size];
    while sizes.len() < max_levels {
        let next = coarser(*sizes.last().unwrap());
        if next.width < min_side || next.height < min_side {
            break;
        }
        sizes.push(next);
    }
    sizes
}

/// Gaussian pyramid, finest level first.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Plane>,
}

impl Pyramid {
    pub fn build(base: Plane, sizes: &[Size]) -> Self {
        let mut levels = vec![base];
        for s in &sizes[1..] {
            let next = levels.last().unwrap().downsampled(*s);
            levels.push(next);
        }
        Self { levels }
    }
}
