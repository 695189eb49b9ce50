//! Pinhole multi-camera model, epipolar and trifocal consistency tests, and
//! linear triangulation.
//!
//! Every value here is immutable after construction and every operation is pure,
//! so cameras can be shared freely between worker threads.

mod camera;
mod dlt;
mod epipolar;

pub use camera::{
    cameras_from_json, cameras_to_json, project, Camera, CameraRecord, Pixel, WorldPoint,
    MIN_DEPTH,
};
pub use dlt::{rms_reprojection, triangulate_dlt, Triangulation, SINGULAR_GAP_TOL};
pub use epipolar::{epipolar_distance, EpipolarPair, MIN_BASELINE};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid camera {0}: {1}")]
    InvalidCamera(usize, String),
    #[error("triangulation needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("camera {0} appears more than once")]
    DuplicateCamera(usize),
    #[error("calibration: {0}")]
    Calibration(String),
}

/// A set of active (foreground) pixels that can answer radius queries.
pub trait ActivePixels {
    /// True if some active pixel lies within `tol` pixels of `(u, v)`.
    fn any_within(&self, u: f64, v: f64, tol: f64) -> bool;
}

impl ActivePixels for [Pixel] {
    fn any_within(&self, u: f64, v: f64, tol: f64) -> bool {
        self.iter()
            .any(|p| (p.u - u).powi(2) + (p.v - v).powi(2) <= tol * tol)
    }
}

impl ActivePixels for Vec<Pixel> {
    fn any_within(&self, u: f64, v: f64, tol: f64) -> bool {
        self.as_slice().any_within(u, v, tol)
    }
}

/// Trifocal consistency: triangulate the A/B pair, reproject into C and look for
/// an active pixel of C within `tol`.
pub fn trifocal_check<S: ActivePixels + ?Sized>(
    cam_a: &Camera,
    cam_b: &Camera,
    cam_c: &Camera,
    pix_a: &Pixel,
    pix_b: &Pixel,
    active_c: &S,
    tol: f64,
) -> Result<bool, GeometryError> {
    if cam_c.id() == cam_a.id() || cam_c.id() == cam_b.id() {
        return Err(GeometryError::DuplicateCamera(cam_c.id()));
    }
    let tri = triangulate_dlt(&[(cam_a, *pix_a), (cam_b, *pix_b)])?;
    Ok(reprojection_confirmed(cam_c, &tri.point, active_c, tol))
}

/// True when `point` projects in front of `cam` and within `tol` of an active pixel.
pub fn reprojection_confirmed<S: ActivePixels + ?Sized>(
    cam: &Camera,
    point: &WorldPoint,
    active: &S,
    tol: f64,
) -> bool {
    match cam.project(point) {
        Some(px) => active.any_within(px.u, px.v, tol),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn three() -> Vec<Camera> {
        let target = WorldPoint::new(3.0, 1.2, 1.2);
        [
            WorldPoint::new(0.0, 0.0, 2.4),
            WorldPoint::new(6.0, 0.0, 2.4),
            WorldPoint::new(3.0, 2.4, 0.2),
        ]
        .iter()
        .enumerate()
        .map(|(i, e)| Camera::look_at(i, e, &target, &Vector3::z(), 2000.0, 2000.0, 1920, 1200).unwrap())
        .collect()
    }

    #[test]
    fn trifocal_accepts_exact_and_rejects_empty() {
        let c = three();
        let p = WorldPoint::new(2.7, 1.4, 1.5);
        let (pa, pb, pc) = (
            c[0].project(&p).unwrap(),
            c[1].project(&p).unwrap(),
            c[2].project(&p).unwrap(),
        );
        assert!(trifocal_check(&c[0], &c[1], &c[2], &pa, &pb, &vec![pc], 3.0).unwrap());
        let empty: Vec<Pixel> = Vec::new();
        assert!(!trifocal_check(&c[0], &c[1], &c[2], &pa, &pb, &empty, 3.0).unwrap());
    }

    #[test]
    fn trifocal_tolerance_boundary() {
        let c = three();
        let p = WorldPoint::new(3.3, 0.9, 1.1);
        let (pa, pb, pc) = (
            c[0].project(&p).unwrap(),
            c[1].project(&p).unwrap(),
            c[2].project(&p).unwrap(),
        );
        let tol = 3.0;
        let far = vec![Pixel::new(2, pc.u + tol + 1.0, pc.v)];
        let near = vec![Pixel::new(2, pc.u, pc.v - (tol - 1.0))];
        assert!(!trifocal_check(&c[0], &c[1], &c[2], &pa, &pb, &far, tol).unwrap());
        assert!(trifocal_check(&c[0], &c[1], &c[2], &pa, &pb, &near, tol).unwrap());
    }
}
