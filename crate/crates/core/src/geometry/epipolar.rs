use nalgebra::{Matrix3, Vector3};

use super::{Camera, GeometryError, Pixel};

/// Camera centers closer than this are considered coincident.
pub const MIN_BASELINE: f64 = 1e-9;

/// Fundamental matrix between two cameras, oriented so that `x_bᵀ F x_a = 0`.
#[derive(Debug, Clone)]
pub struct EpipolarPair {
    f: Matrix3<f64>,
}

impl EpipolarPair {
    pub fn new(a: &Camera, b: &Camera) -> Result<Self, GeometryError> {
        if (a.center() - b.center()).norm() < MIN_BASELINE {
            return Err(GeometryError::DegenerateGeometry(format!(
                "cameras {} and {} share an optical center",
                a.id(),
                b.id()
            )));
        }
        let r = b.rotation() * a.rotation().transpose();
        let t = b.translation() - r * a.translation();
        let essential = t.cross_matrix() * r;
        let ka_inv = inverse_intrinsics(a);
        let kb_inv = inverse_intrinsics(b);
        let f = kb_inv.transpose() * essential * ka_inv;
        Ok(Self { f: f / f.norm() })
    }

    pub fn fundamental(&self) -> &Matrix3<f64> {
        &self.f
    }

    /// Epipolar line in image B of pixel `(u, v)` of image A, scaled so that the dot
    /// product with a homogeneous pixel is a signed distance.
    pub fn line_in_b(&self, u: f64, v: f64) -> Vector3<f64> {
        unit_line(self.f * Vector3::new(u, v, 1.0))
    }

    /// Epipolar line in image A of pixel `(u, v)` of image B.
    pub fn line_in_a(&self, u: f64, v: f64) -> Vector3<f64> {
        unit_line(self.f.tr_mul(&Vector3::new(u, v, 1.0)))
    }

    /// Mean of the two point-to-epipolar-line distances.
    pub fn symmetric_distance(&self, ua: f64, va: f64, ub: f64, vb: f64) -> f64 {
        let lb = self.line_in_b(ua, va);
        let la = self.line_in_a(ub, vb);
        0.5 * (line_distance(&lb, ub, vb) + line_distance(&la, ua, va))
    }
}

fn inverse_intrinsics(c: &Camera) -> Matrix3<f64> {
    Matrix3::new(
        1.0 / c.fx(),
        0.0,
        -c.cx() / c.fx(),
        0.0,
        1.0 / c.fy(),
        -c.cy() / c.fy(),
        0.0,
        0.0,
        1.0,
    )
}

// A pixel sitting exactly on the epipole maps to the zero line; it is then
// compatible with every pixel of the other view, so its distance is zero.
fn unit_line(l: Vector3<f64>) -> Vector3<f64> {
    let n = l.x.hypot(l.y);
    if n > 0.0 {
        l / n
    } else {
        Vector3::zeros()
    }
}

#[inline]
pub(crate) fn line_distance(l: &Vector3<f64>, u: f64, v: f64) -> f64 {
    (l.x * u + l.y * v + l.z).abs()
}

/// Symmetric epipolar distance in pixels between `pix_a` (seen by `a`) and `pix_b`
/// (seen by `b`). The computation is canonicalised on camera id, so swapping both
/// cameras and both pixels gives the identical value.
pub fn epipolar_distance(
    a: &Camera,
    b: &Camera,
    pix_a: &Pixel,
    pix_b: &Pixel,
) -> Result<f64, GeometryError> {
    if a.id() > b.id() {
        return epipolar_distance(b, a, pix_b, pix_a);
    }
    let pair = EpipolarPair::new(a, b)?;
    Ok(pair.symmetric_distance(pix_a.u, pix_a.v, pix_b.u, pix_b.v))
}
