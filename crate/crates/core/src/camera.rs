//! Pinhole camera models for the two-camera rig and the rotation-induced
//! homography that carries wide-camera pixels into the narrow camera.
//!
//! Pixel convention: origin at the top-left pixel center, x to the right,
//! y downward, pixel centers at integer coordinates.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::raster::Size;

const DET_EPS: f64 = 1e-12;
const ORTHO_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let all_finite = [fx, fy, cx, cy, skew].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCalibration(format!(
                "intrinsics need finite values and positive focal lengths (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the focal length chosen to span `hfov_deg` horizontally.
    pub fn from_hfov(size: Size, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidCalibration(format!("hfov {hfov_deg} out of (0, 180)")));
        }
        let f = (size.width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(
            f,
            f,
            (size.width as f64 - 1.0) / 2.0,
            (size.height as f64 - 1.0) / 2.0,
            0.0,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Back-projects a pixel to a camera-frame ray direction with z = 1.
    pub fn unproject(&self, x: f64, y: f64) -> Vector3<f64> {
        let yn = (y - self.cy) / self.fy;
        let xn = (x - self.cx - self.skew * yn) / self.fx;
        Vector3::new(xn, yn, 1.0)
    }

    /// Projects a camera-frame point; `None` when it lies behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 1e-9 {
            return None;
        }
        let xn = p.x / p.z;
        let yn = p.y / p.z;
        Some((self.fx * xn + self.skew * yn + self.cx, self.fy * yn + self.cy))
    }
}

/// Proper 3D rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn new(r: Matrix3<f64>) -> Result<Self> {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > ORTHO_TOL {
            return Err(Error::InvalidCalibration(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidCalibration("rotation determinant is not 1".into()));
        }
        Ok(Self(r))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

/// Projective map between image planes, stored with h33 = 1 whenever the
/// raw h33 is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(h: Matrix3<f64>) -> Result<Self> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCalibration("homography has non-finite entries".into()));
        }
        let h = normalize(h);
        if h.determinant().abs() <= DET_EPS {
            return Err(Error::InvalidCalibration("homography is singular".into()));
        }
        Ok(Self(h))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let h = &self.0;
        let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
        if w.abs() <= DET_EPS {
            return Err(Error::PointAtInfinity { x, y });
        }
        Ok((
            (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w,
            (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::InvalidCalibration("homography is not invertible".into()))?;
        Self::new(inv)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Homography) -> Result<Self> {
        Self::new(self.0 * inner.0)
    }
}

fn normalize(h: Matrix3<f64>) -> Matrix3<f64> {
    let s = h[(2, 2)];
    if s != 0.0 && s.abs() > DET_EPS {
        h / s
    } else {
        h
    }
}

/// Two co-centered cameras: the narrow one is related to the wide one by a
/// pure rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub cam_narrow: Intrinsics,
    pub cam_wide: Intrinsics,
    pub rotation_wide_to_narrow: Rotation3,
    pub size_narrow: Size,
    pub size_wide: Size,
}

impl CameraRig {
    pub fn new(
        cam_narrow: Intrinsics,
        cam_wide: Intrinsics,
        rotation_wide_to_narrow: Rotation3,
        size_narrow: Size,
        size_wide: Size,
    ) -> Result<Self> {
        if size_narrow.is_empty() || size_wide.is_empty() {
            return Err(Error::InvalidCalibration("image sizes must be positive".into()));
        }
        Ok(Self { cam_narrow, cam_wide, rotation_wide_to_narrow, size_narrow, size_wide })
    }

    /// 60°/120° horizontal field-of-view pair with identical image sizes and
    /// aligned optical axes.
    pub fn default_pair(size: Size) -> Result<Self> {
        Self::new(
            Intrinsics::from_hfov(size, 60.0)?,
            Intrinsics::from_hfov(size, 120.0)?,
            Rotation3::identity(),
            size,
            size,
        )
    }

    /// The same rig seen from the other side: narrow and wide exchange roles
    /// and the rotation is inverted.
    pub fn swapped(&self) -> Self {
        Self {
            cam_narrow: self.cam_wide,
            cam_wide: self.cam_narrow,
            rotation_wide_to_narrow: self.rotation_wide_to_narrow.transpose(),
            size_narrow: self.size_wide,
            size_wide: self.size_narrow,
        }
    }

    pub fn homography(&self) -> Result<Homography> {
        homography_from_rig(self)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        for (prefix, cam, size) in [
            ("narrow", &self.cam_narrow, self.size_narrow),
            ("wide", &self.cam_wide, self.size_wide),
        ] {
            doc.push(format!("{prefix}.fx"), cam.fx);
            doc.push(format!("{prefix}.fy"), cam.fy);
            doc.push(format!("{prefix}.cx"), cam.cx);
            doc.push(format!("{prefix}.cy"), cam.cy);
            doc.push(format!("{prefix}.skew"), cam.skew);
            doc.push(format!("{prefix}.width"), size.width);
            doc.push(format!("{prefix}.height"), size.height);
        }
        let r = self.rotation_wide_to_narrow.matrix();
        let row_major: Vec<String> =
            (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)].to_string())).collect();
        doc.push("rotation", row_major.join(" "));
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        const WHAT: &str = "calibration";
        let cam = |prefix: &str| -> Result<(Intrinsics, Size)> {
            let k = |name: &str| format!("{prefix}.{name}");
            let intr = Intrinsics::new(
                doc.require(&k("fx"), WHAT)?,
                doc.require(&k("fy"), WHAT)?,
                doc.require(&k("cx"), WHAT)?,
                doc.require(&k("cy"), WHAT)?,
                doc.get_or(&k("skew"), 0.0, WHAT)?,
            )?;
            let size = Size::new(doc.require(&k("width"), WHAT)?, doc.require(&k("height"), WHAT)?);
            Ok((intr, size))
        };
        let (narrow, size_narrow) = cam("narrow")?;
        let (wide, size_wide) = cam("wide")?;
        let r: Vec<f64> = doc.require_list("rotation", WHAT)?;
        if r.len() != 9 {
            return Err(Error::format(WHAT, format!("rotation needs 9 values, got {}", r.len())));
        }
        let rotation = Rotation3::new(Matrix3::from_row_slice(&r))?;
        Self::new(narrow, wide, rotation, size_narrow, size_wide)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text, "calibration")?)
    }
}

/// `K_narrow · R · K_wide⁻¹`, mapping wide pixel coordinates to narrow ones.
pub fn homography_from_rig(rig: &CameraRig) -> Result<Homography> {
    let kn = rig.cam_narrow.matrix();
    let kw = rig.cam_wide.matrix();
    for (name, k) in [("narrow", &kn), ("wide", &kw)] {
        if k.determinant().abs() < DET_EPS {
            return Err(Error::InvalidCalibration(format!("{name} intrinsics are near-singular")));
        }
    }
    let kw_inv = kw
        .try_inverse()
        .ok_or_else(|| Error::InvalidCalibration("wide intrinsics are singular".into()))?;
    Homography::new(kn * rig.rotation_wide_to_narrow.matrix() * kw_inv)
}

pub fn apply_homography(h: &Homography, p: (f64, f64)) -> Result<(f64, f64)> {
    h.apply(p.0, p.1)
}

pub fn invert_homography(h: &Homography) -> Result<Homography> {
    h.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(f: f64) -> Intrinsics {
        Intrinsics::new(f, f, 0.0, 0.0, 0.0).unwrap()
    }

    fn rig(kn: Intrinsics, kw: Intrinsics, r: Rotation3) -> CameraRig {
        let s = Size::new(64, 48);
        CameraRig::new(kn, kw, r, s, s).unwrap()
    }

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn identity_rig_gives_identity_exactly() {
        let h = homography_from_rig(&rig(k(1.0), k(1.0), Rotation3::identity())).unwrap();
        assert_eq!(*h.matrix(), Matrix3::identity());
    }

    #[test]
    fn focal_scale_rig() {
        let h = homography_from_rig(&rig(k(2.0), k(1.0), Rotation3::identity())).unwrap();
        assert_eq!(*h.matrix(), Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn z_rotation_commutes_with_square_pixels() {
        let t = 5f64.to_radians();
        let r = Rotation3::from_axis_angle(Vector3::z(), t);
        let h = homography_from_rig(&rig(k(100.0), k(100.0), r)).unwrap();
        let expected = Matrix3::new(t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0);
        assert!(max_abs_diff(h.matrix(), &expected) < 1e-12);
    }

    #[test]
    fn near_singular_intrinsics_rejected() {
        let tiny = Intrinsics::new(1e-7, 1e-7, 0.0, 0.0, 0.0).unwrap();
        let err = homography_from_rig(&rig(tiny, k(1.0), Rotation3::identity())).unwrap_err();
        assert!(matches!(err, Error::InvalidCalibration(_)));
    }

    #[test]
    fn apply_examples() {
        let id = Homography::identity();
        assert_eq!(id.apply(3.5, 4.5).unwrap(), (3.5, 4.5));
        let s = Homography::new(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.apply(3.0, 4.0).unwrap(), (6.0, 8.0));
        let t = Homography::new(Matrix3::new(1.0, 0.0, 10.0, 0.0, 1.0, -5.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(t.apply(0.0, 0.0).unwrap(), (10.0, -5.0));
    }

    #[test]
    fn point_at_infinity() {
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!(matches!(h.apply(-1.0, 3.0), Err(Error::PointAtInfinity { .. })));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(*Homography::identity().inverse().unwrap().matrix(), Matrix3::identity());
        let s = Homography::new(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(
            *s.inverse().unwrap().matrix(),
            Matrix3::new(0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0)
        );
        assert!(Homography::new(Matrix3::zeros()).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let h = Homography::new(Matrix3::new(2.0, 0.1, 3.0, 0.2, 4.0, 1.0, 0.001, 0.002, 2.0)).unwrap();
        assert_eq!(h.matrix()[(2, 2)], 1.0);
        assert_eq!(Homography::new(*h.matrix()).unwrap(), h);
    }

    #[test]
    fn calibration_text_roundtrip() {
        let r = Rotation3::from_axis_angle(Vector3::new(0.3, 1.0, 0.1), 0.07);
        let kn = Intrinsics::new(166.27687752661222, 166.3, 95.5, 63.5, 0.01).unwrap();
        let kw = Intrinsics::new(55.425625842204074, 55.4, 95.5, 63.5, 0.0).unwrap();
        let rig = CameraRig::new(kn, kw, r, Size::new(192, 128), Size::new(160, 120)).unwrap();
        let back = CameraRig::parse(&rig.to_text()).unwrap();
        assert_eq!(back, rig);
        assert!(CameraRig::parse("narrow.fx = 1\n").is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3> {
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64, -0.3..0.3f64)
            .prop_map(|(x, y, z, a)| Rotation3::from_axis_angle(Vector3::new(x, y, z), a))
    }

    fn arb_intrinsics() -> impl Strategy<Value = Intrinsics> {
        (20.0..400.0f64, 20.0..400.0f64, 0.0..200.0f64, 0.0..200.0f64, -0.5..0.5f64)
            .prop_map(|(fx, fy, cx, cy, s)| Intrinsics::new(fx, fy, cx, cy, s).unwrap())
    }

    proptest! {
        #[test]
        fn swapped_rig_composes_to_identity(kn in arb_intrinsics(), kw in arb_intrinsics(), r in arb_rotation()) {
            let rig = rig(kn, kw, r);
            let fwd = homography_from_rig(&rig).unwrap();
            let back = homography_from_rig(&rig.swapped()).unwrap();
            let prod = back.compose(&fwd).unwrap();
            prop_assert!(max_abs_diff(prod.matrix(), &Matrix3::identity()) < 1e-9);
        }

        #[test]
        fn inverse_roundtrips_points(kn in arb_intrinsics(), kw in arb_intrinsics(), r in arb_rotation(),
                                     x in 0.0..200.0f64, y in 0.0..200.0f64) {
            let h = homography_from_rig(&rig(kn, kw, r)).unwrap();
            let inv = h.inverse().unwrap();
            if let Ok((u, v)) = h.apply(x, y) {
                let (bx, by) = inv.apply(u, v).unwrap();
                prop_assert!((bx - x).abs() < 1e-6 && (by - y).abs() < 1e-6);
            }
        }

        #[test]
        fn projective_scale_invariance(kn in arb_intrinsics(), kw in arb_intrinsics(), r in arb_rotation(),
                                       s in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64],
                                       x in 0.0..200.0f64, y in 0.0..200.0f64) {
            let h = homography_from_rig(&rig(kn, kw, r)).unwrap();
            let scaled = Homography::new(h.matrix() * s).unwrap();
            let a = h.apply(x, y).unwrap();
            let b = scaled.apply(x, y).unwrap();
            // absolute for pixel-scale outputs, relative near the line at infinity
            let tol = |v: f64| 1e-9 * v.abs().max(1.0);
            prop_assert!((a.0 - b.0).abs() < tol(a.0) && (a.1 - b.1).abs() < tol(a.1));
        }
    }
}
