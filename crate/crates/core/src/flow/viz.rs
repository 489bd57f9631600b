//! Middlebury-style color-wheel rendering of a flow field.

use crate::raster::{FlowField, Image};

const SEGMENTS: [(usize, [f64; 3], [f64; 3]); 6] = [
    (15, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]), // red -> yellow
    (6, [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),  // yellow -> green
    (4, [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),  // green -> cyan
    (11, [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]), // cyan -> blue
    (13, [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]), // blue -> magenta
    (6, [1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),  // magenta -> red
];

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (n, from, to) in SEGMENTS {
        for i in 0..n {
            let t = i as f64 / n as f64;
            wheel.push([0, 1, 2].map(|c| from[c] + (to[c] - from[c]) * t));
        }
    }
    wheel
}

/// RGB visualization; hue encodes direction, saturation encodes magnitude
/// relative to the largest vector in the field.
pub fn flow_to_color(flow: &FlowField) -> Image {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max_rad = flow
        .data()
        .iter()
        .map(|d| (d[0] as f64).hypot(d[1] as f64))
        .fold(0.0f64, f64::max);
    let scale = if max_rad > 0.0 { 1.0 / max_rad } else { 0.0 };
    let n = flow.size().area();
    let mut data = vec![0f32; 3 * n];
    for (i, d) in flow.data().iter().enumerate() {
        let (u, v) = (d[0] as f64 * scale, d[1] as f64 * scale);
        let rad = u.hypot(v);
        let a = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f64;
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
            data[c * n + i] = col.clamp(0.0, 1.0) as f32;
        }
    }
    Image::new(flow.size(), 3, data).expect("color wheel values lie in [0, 1]")
}
