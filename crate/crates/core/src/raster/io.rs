//! Binary formats: PGM/PPM images, Middlebury `.flo` flow, and the SEMSHARE
//! container for score maps, label maps and fusion-head parameters.
//!
//! SEMSHARE layout (all little-endian):
//!
//! ```text
//! magic    8 bytes  "SEMSHARE"
//! version  u32      1
//! kind     u32      0 = scores, 1 = labels, 2 = fusion head
//! width    u32      (head: variant tag)
//! height   u32      (head: hidden width)
//! channels u32      classes
//! payload           scores: f32 planar; labels: u8;
//!                   head: u32 layer count, then per layer
//!                         u32 out, u32 in, f32[out*in] weights, f32[out] biases
//! ```

use std::io::{Read, Write};

use super::{FlowField, Image, LabelMap, Mask, ScoreMap, Size};
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
pub const SEMSHARE_MAGIC: &[u8; 8] = b"SEMSHARE";
pub const SEMSHARE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ContainerKind {
    Scores = 0,
    Labels = 1,
    Head = 2,
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(what, "truncated data"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_f32s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f32>> {
    let b = read_exact(r, n * 4, what)?;
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_f32s<W: Write>(w: &mut W, vals: impl IntoIterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = vals.into_iter().flat_map(f32::to_le_bytes).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn dim_u32(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(what, format!("dimension {v} exceeds u32")))
}

// ---------------------------------------------------------------------------
// PNM
// ---------------------------------------------------------------------------

fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_pgm<W: Write>(mut w: W, img: &Image) -> Result<()> {
    let gray = img.to_gray();
    let s = gray.size();
    write!(w, "P5\n{} {}\n255\n", s.width, s.height)?;
    let bytes: Vec<u8> = gray.data().iter().map(|&v| quantize(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Writes RGB images as P6; single-channel images are replicated to RGB.
pub fn write_ppm<W: Write>(mut w: W, img: &Image) -> Result<()> {
    let s = img.size();
    write!(w, "P6\n{} {}\n255\n", s.width, s.height)?;
    let n = s.area();
    let mut bytes = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            let ch = if img.channels() == 3 { c } else { 0 };
            bytes.push(quantize(img.data()[ch * n + i]));
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// P5 for gray images, P6 for RGB.
pub fn write_pnm<W: Write>(w: W, img: &Image) -> Result<()> {
    if img.channels() == 1 {
        write_pgm(w, img)
    } else {
        write_ppm(w, img)
    }
}

pub fn read_pnm<R: Read>(mut r: R) -> Result<Image> {
    const WHAT: &str = "PNM image";
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < all.len() && all[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < all.len() && all[pos] == b'#' {
            while pos < all.len() && all[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < all.len() && !all[pos].is_ascii_whitespace() && all[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(WHAT, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&all[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(WHAT, format!("unsupported magic `{other}`"))),
    };
    let parse = |t: &str| -> Result<usize> {
        t.parse().map_err(|_| Error::format(WHAT, format!("bad header field `{t}`")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(WHAT, format!("unsupported maxval {maxval}")));
    }
    let size = Size::new(width, height);
    let n = size.area();
    if all.len() < pos + n * channels {
        return Err(Error::format(WHAT, "truncated raster"));
    }
    let raw = &all[pos..pos + n * channels];
    let mut data = vec![0f32; n * channels];
    for i in 0..n {
        for c in 0..channels {
            data[c * n + i] = (raw[i * channels + c] as f64 / maxval as f64) as f32;
        }
    }
    Image::new(size, channels, data)
}

// ---------------------------------------------------------------------------
// Middlebury .flo
// ---------------------------------------------------------------------------

pub fn write_flo<W: Write>(mut w: W, flow: &FlowField) -> Result<()> {
    let s = flow.size();
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(dim_u32(s.width, "flo")? as i32).to_le_bytes())?;
    w.write_all(&(dim_u32(s.height, "flo")? as i32).to_le_bytes())?;
    write_f32s(&mut w, flow.data().iter().flat_map(|d| [d[0], d[1]]))
}

pub fn read_flo<R: Read>(mut r: R) -> Result<FlowField> {
    const WHAT: &str = ".flo flow";
    let magic = read_f32s(&mut r, 1, WHAT)?[0];
    if magic != FLO_MAGIC {
        return Err(Error::format(WHAT, format!("bad magic {magic}")));
    }
    let w = read_u32(&mut r, WHAT)? as i32;
    let h = read_u32(&mut r, WHAT)? as i32;
    if w <= 0 || h <= 0 || (w as i64) * (h as i64) > (1 << 28) {
        return Err(Error::format(WHAT, format!("implausible size {w}x{h}")));
    }
    let size = Size::new(w as usize, h as usize);
    let vals = read_f32s(&mut r, size.area() * 2, WHAT)?;
    FlowField::new(size, vals.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

// ---------------------------------------------------------------------------
// SEMSHARE container
// ---------------------------------------------------------------------------

struct Header {
    kind: u32,
    width: u32,
    height: u32,
    channels: u32,
}

fn write_header<W: Write>(w: &mut W, kind: ContainerKind, a: u32, b: u32, c: u32) -> Result<()> {
    w.write_all(SEMSHARE_MAGIC)?;
    for v in [SEMSHARE_VERSION, kind as u32, a, b, c] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, expect: ContainerKind) -> Result<Header> {
    const WHAT: &str = "SEMSHARE container";
    let magic = read_exact(r, 8, WHAT)?;
    if magic.as_slice() != SEMSHARE_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = read_u32(r, WHAT)?;
    if version != SEMSHARE_VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let h = Header {
        kind: read_u32(r, WHAT)?,
        width: read_u32(r, WHAT)?,
        height: read_u32(r, WHAT)?,
        channels: read_u32(r, WHAT)?,
    };
    if h.kind != expect as u32 {
        return Err(Error::format(WHAT, format!("kind {} where {:?} expected", h.kind, expect)));
    }
    if expect != ContainerKind::Head && (h.width as u64) * (h.height as u64) * (h.channels.max(1) as u64) > (1 << 30) {
        return Err(Error::format(WHAT, "implausible raster size"));
    }
    Ok(h)
}

pub fn write_scores<W: Write>(mut w: W, scores: &ScoreMap) -> Result<()> {
    let s = scores.size();
    write_header(
        &mut w,
        ContainerKind::Scores,
        dim_u32(s.width, "scores")?,
        dim_u32(s.height, "scores")?,
        dim_u32(scores.classes(), "scores")?,
    )?;
    write_f32s(&mut w, scores.data().iter().copied())
}

pub fn read_scores<R: Read>(mut r: R) -> Result<ScoreMap> {
    let h = read_header(&mut r, ContainerKind::Scores)?;
    let size = Size::new(h.width as usize, h.height as usize);
    let data = read_f32s(&mut r, size.area() * h.channels as usize, "SEMSHARE scores")?;
    ScoreMap::new(size, h.channels as usize, data)
}

pub fn write_labels<W: Write>(mut w: W, labels: &LabelMap) -> Result<()> {
    let s = labels.size();
    write_header(
        &mut w,
        ContainerKind::Labels,
        dim_u32(s.width, "labels")?,
        dim_u32(s.height, "labels")?,
        dim_u32(labels.classes(), "labels")?,
    )?;
    w.write_all(labels.data())?;
    Ok(())
}

pub fn read_labels<R: Read>(mut r: R) -> Result<LabelMap> {
    let h = read_header(&mut r, ContainerKind::Labels)?;
    let size = Size::new(h.width as usize, h.height as usize);
    let data = read_exact(&mut r, size.area(), "SEMSHARE labels")?;
    LabelMap::new(size, h.channels as usize, data)
}

/// Masks travel as two-class label maps (1 = valid).
pub fn write_mask<W: Write>(w: W, mask: &Mask) -> Result<()> {
    let data = mask.data().iter().map(|&v| v as u8).collect();
    write_labels(w, &LabelMap::new(mask.size(), 2, data)?)
}

pub fn read_mask<R: Read>(r: R) -> Result<Mask> {
    let labels = read_labels(r)?;
    if labels.classes() != 2 {
        return Err(Error::format("SEMSHARE mask", "mask must have 2 classes"));
    }
    Mask::new(labels.size(), labels.data().iter().map(|&l| l == 1).collect())
}

/// Raw fusion-head payload; decoding into a head lives with the fusion module.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBlob {
    pub variant_tag: u32,
    pub hidden: u32,
    pub classes: u32,
    /// `(out, in, weights, biases)` per layer.
    pub layers: Vec<(u32, u32, Vec<f32>, Vec<f32>)>,
}

pub fn write_head_container<W: Write>(mut w: W, blob: &HeadBlob) -> Result<()> {
    write_header(&mut w, ContainerKind::Head, blob.variant_tag, blob.hidden, blob.classes)?;
    w.write_all(&dim_u32(blob.layers.len(), "head")?.to_le_bytes())?;
    for (out, inp, weights, biases) in &blob.layers {
        w.write_all(&out.to_le_bytes())?;
        w.write_all(&inp.to_le_bytes())?;
        write_f32s(&mut w, weights.iter().copied())?;
        write_f32s(&mut w, biases.iter().copied())?;
    }
    Ok(())
}

pub fn read_head_container<R: Read>(mut r: R) -> Result<HeadBlob> {
    const WHAT: &str = "SEMSHARE head";
    let h = read_header(&mut r, ContainerKind::Head)?;
    let count = read_u32(&mut r, WHAT)?;
    if count > 64 {
        return Err(Error::format(WHAT, format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let out = read_u32(&mut r, WHAT)?;
        let inp = read_u32(&mut r, WHAT)?;
        if (out as u64) * (inp as u64) > (1 << 24) {
            return Err(Error::format(WHAT, format!("implausible layer shape {out}x{inp}")));
        }
        let weights = read_f32s(&mut r, (out * inp) as usize, WHAT)?;
        let biases = read_f32s(&mut r, out as usize, WHAT)?;
        layers.push((out, inp, weights, biases));
    }
    Ok(HeadBlob { variant_tag: h.width, hidden: h.height, classes: h.channels, layers })
}
