use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Camera, WorldPoint};

/// A perch as a straight segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perch {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

impl Perch {
    pub fn point(&self, s: f64) -> WorldPoint {
        let a = Vector3::from(self.a);
        let b = Vector3::from(self.b);
        (a + (b - a) * s).into()
    }
}

/// 12 central perches 40 cm below the ceiling and 8 side perches 50 cm below it,
/// for the 6 x 2.4 x 2.4 m volume.
pub fn default_perches() -> Vec<Perch> {
    let mut out = Vec::with_capacity(20);
    for i in 0..6 {
        let x = 1.0 + 0.8 * i as f64;
        out.push(Perch { a: [x, 0.7, 2.0], b: [x, 1.1, 2.0] });
        out.push(Perch { a: [x, 1.3, 2.0], b: [x, 1.7, 2.0] });
    }
    for y in [0.1, 2.3] {
        for i in 0..4 {
            let x = 0.7 + 1.5 * i as f64;
            out.push(Perch { a: [x, y, 1.9], b: [x + 0.6, y, 1.9] });
        }
    }
    out
}

pub const IMAGE_WIDTH: u32 = 1920;
pub const IMAGE_HEIGHT: u32 = 1200;

/// Eight corner cameras (four top, four bottom) with a 48 x 31 degree field of
/// view at 1920 x 1200, placed just outside the volume and aimed inward.
pub fn default_rig() -> Vec<Camera> {
    let fx = (IMAGE_WIDTH as f64 / 2.0) / 24f64.to_radians().tan();
    let fy = (IMAGE_HEIGHT as f64 / 2.0) / 15.5f64.to_radians().tan();
    let (ox, oy) = (0.8, 0.3);
    let mut cams = Vec::with_capacity(8);
    for (ix, end) in [0.0f64, 6.0].into_iter().enumerate() {
        for (iy, side) in [0.0f64, 2.4].into_iter().enumerate() {
            let ex = if ix == 0 { end - ox } else { end + ox };
            let ey = if iy == 0 { side - oy } else { side + oy };
            let tx = if ix == 0 { 5.2 } else { 0.8 };
            let ty = if iy == 0 { 1.55 } else { 0.85 };
            for (ez, tz) in [(2.35, 0.8), (0.6, 1.0)] {
                let id = cams.len();
                cams.push(
                    Camera::look_at(
                        id,
                        &WorldPoint::new(ex, ey, ez),
                        &WorldPoint::new(tx, ty, tz),
                        &Vector3::z(),
                        fx,
                        fy,
                        IMAGE_WIDTH,
                        IMAGE_HEIGHT,
                    )
                    .expect("default rig is valid"),
                );
            }
        }
    }
    cams
}
