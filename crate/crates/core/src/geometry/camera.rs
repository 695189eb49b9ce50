use nalgebra::{Matrix3, Matrix3x4, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// A point in the aviary frame, meters. Right-handed, z up, origin at a floor corner.
pub type WorldPoint = Point3<f64>;

/// Camera-frame depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Image coordinates in pixels. Integer pixel `(i, j)` covers `[i, i+1) x [j, j+1)`,
/// so its center sits at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub camera_id: usize,
}

impl Pixel {
    pub fn new(camera_id: usize, u: f64, v: f64) -> Self {
        Self { u, v, camera_id }
    }

    pub fn coords(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Ideal pinhole camera with a rigid world-to-camera transform `x_c = R x_w + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    id: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: u32,
    height: u32,
    center: Point3<f64>,
    projection: Matrix3x4<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite())
            && rotation.iter().all(|v| v.is_finite())
            && translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidCamera(id, "non-finite parameter".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidCamera(id, "focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera(id, "empty image".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidCamera(
                id,
                "principal point outside the image".into(),
            ));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if orth >= 1e-9 || rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidCamera(
                id,
                format!("rotation is not a proper rotation (|R^T R - I| = {orth:.3e})"),
            ));
        }
        let center = Point3::from(-(rotation.transpose() * translation));
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        rt.set_column(3, &translation);
        Ok(Self {
            id,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
            center,
            projection: k * rt,
        })
    }

    /// Builds a camera at `eye` whose optical axis points at `target`. `up` fixes the roll:
    /// image rows grow away from it.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        id: usize,
        eye: &WorldPoint,
        target: &WorldPoint,
        up: &Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| {
            GeometryError::InvalidCamera(id, "eye and target coincide".into())
        })?;
        let x = z.cross(up).try_normalize(1e-12).ok_or_else(|| {
            GeometryError::InvalidCamera(id, "up vector parallel to the optical axis".into())
        })?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::new(
            id,
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> &WorldPoint {
        &self.center
    }

    /// `K [R | t]`.
    pub fn projection_matrix(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn to_camera_frame(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Depth of `p` along the optical axis.
    pub fn depth(&self, p: &WorldPoint) -> f64 {
        self.rotation.row(2).transpose().dot(&p.coords) + self.translation.z
    }

    /// Perspective projection; `None` when the point is behind the camera
    /// (depth <= [`MIN_DEPTH`]). No bounds check is applied.
    pub fn project(&self, p: &WorldPoint) -> Option<Pixel> {
        let pc = self.to_camera_frame(p);
        if pc.z <= MIN_DEPTH {
            return None;
        }
        Some(Pixel {
            u: self.fx * pc.x / pc.z + self.cx,
            v: self.fy * pc.y / pc.z + self.cy,
            camera_id: self.id,
        })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// In front of the camera and inside the image.
    pub fn sees(&self, p: &WorldPoint) -> bool {
        self.project(p).is_some_and(|px| self.contains(px.u, px.v))
    }
}

/// Perspective projection of `p`, or `None` when it lies behind the camera.
pub fn project(camera: &Camera, p: &WorldPoint) -> Option<Pixel> {
    camera.project(p)
}

/// Row of the calibration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = c.rotation[(row, col)];
            }
        }
        Self {
            id: c.id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = GeometryError;

    fn try_from(r: &CameraRecord) -> Result<Self, Self::Error> {
        Camera::new(
            r.id,
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            Matrix3::from_row_slice(&r.r),
            Vector3::from_column_slice(&r.t),
            r.width,
            r.height,
        )
    }
}

/// Parses a calibration document (JSON array of cameras).
pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>, GeometryError> {
    let records: Vec<CameraRecord> =
        serde_json::from_str(text).map_err(|e| GeometryError::Calibration(e.to_string()))?;
    let cameras = records
        .iter()
        .map(Camera::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let mut ids: Vec<usize> = cameras.iter().map(Camera::id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(GeometryError::Calibration("duplicate camera id".into()));
    }
    Ok(cameras)
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}
