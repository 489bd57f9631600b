//! File loading with the error class each input deserves: calibration and
//! trained heads are configuration, rasters are data.

use std::fs;
use std::path::Path;

use semshare::fusion::FusionHead;
use semshare::raster::{read_labels, read_mask, read_pnm, read_scores, write_mask, write_scores, ContainerKind};
use semshare::{CameraRig, Error, Image, LabelMap, Mask, Result, ScoreMap};

fn as_config(path: &Path, e: Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn load_rig(path: &Path) -> Result<CameraRig> {
    let text = fs::read_to_string(path).map_err(|e| as_config(path, e.into()))?;
    CameraRig::parse(&text).map_err(|e| match e {
        Error::InvalidCalibration(_) => e,
        other => as_config(path, other),
    })
}

pub fn load_head(path: &Path) -> Result<FusionHead> {
    FusionHead::load(path).map_err(|e| as_config(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format { what: "input file", msg: format!("{}: {e}", path.display()) })
}

pub fn load_image(path: &Path) -> Result<Image> {
    read_pnm(read(path)?.as_slice())
}

pub fn load_scores(path: &Path) -> Result<ScoreMap> {
    read_scores(read(path)?.as_slice())
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    read_mask(read(path)?.as_slice())
}

/// Label maps come either as label containers or as score containers, which
/// are reduced by argmax.
pub fn load_labels_or_scores(path: &Path) -> Result<LabelMap> {
    let bytes = read(path)?;
    match container_kind(&bytes) {
        Some(ContainerKind::Scores) => Ok(read_scores(bytes.as_slice())?.argmax()),
        _ => read_labels(bytes.as_slice()),
    }
}

fn container_kind(bytes: &[u8]) -> Option<ContainerKind> {
    let tag = u32::from_le_bytes(bytes.get(12..16)?.try_into().ok()?);
    match tag {
        0 => Some(ContainerKind::Scores),
        1 => Some(ContainerKind::Labels),
        2 => Some(ContainerKind::Head),
        _ => None,
    }
}

pub fn save(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn save_scores(path: &Path, s: &ScoreMap) -> Result<()> {
    save(path, |b| write_scores(b, s))
}

pub fn save_mask(path: &Path, m: &Mask) -> Result<()> {
    save(path, |b| write_mask(b, m))
}
