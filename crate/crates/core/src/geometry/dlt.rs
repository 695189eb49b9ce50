use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, RowVector4, Vector4};

use super::{Camera, GeometryError, Pixel, WorldPoint};

/// Result of a linear triangulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: WorldPoint,
    /// Root-mean-square reprojection residual over all observations, pixels.
    pub rms_reprojection: f64,
}

/// Relative gap between the two smallest singular values below which the
/// homogeneous solution is not unique.
pub const SINGULAR_GAP_TOL: f64 = 1e-12;

/// Similarity taking a camera's pixel grid to roughly `[-√2, √2]²`.
fn pixel_normalization(c: &Camera) -> Matrix3<f64> {
    let (w, h) = (c.width() as f64, c.height() as f64);
    let s = std::f64::consts::SQRT_2 / (0.5 * w.hypot(h));
    Matrix3::new(s, 0.0, -s * 0.5 * w, 0.0, s, -s * 0.5 * h, 0.0, 0.0, 1.0)
}

fn dlt_rows(c: &Camera, px: &Pixel) -> [RowVector4<f64>; 2] {
    let t = pixel_normalization(c);
    let p: Matrix3x4<f64> = t * c.projection_matrix();
    let u = t[(0, 0)] * px.u + t[(0, 2)];
    let v = t[(1, 1)] * px.v + t[(1, 2)];
    let r0 = p.row(2) * u - p.row(0);
    let r1 = p.row(2) * v - p.row(1);
    [r0 / r0.norm(), r1 / r1.norm()]
}

/// Homogeneous linear (DLT) triangulation over two or more views from distinct
/// cameras, with Hartley pixel normalization.
pub fn triangulate_dlt(observations: &[(&Camera, Pixel)]) -> Result<Triangulation, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientViews(observations.len()));
    }
    for (i, (a, _)) in observations.iter().enumerate() {
        if observations[..i].iter().any(|(b, _)| b.id() == a.id()) {
            return Err(GeometryError::DuplicateCamera(a.id()));
        }
    }

    let (singular, null) = if observations.len() == 2 {
        // fixed-size system; the common case in per-frame matching
        let [r0, r1] = dlt_rows(observations[0].0, &observations[0].1);
        let [r2, r3] = dlt_rows(observations[1].0, &observations[1].1);
        let a = Matrix4::from_rows(&[r0, r1, r2, r3]);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let sv: [f64; 4] = std::array::from_fn(|i| svd.singular_values[i]);
        let rows: [Vector4<f64>; 4] = std::array::from_fn(|i| v_t.row(i).transpose());
        (sv, rows)
    } else {
        let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
        for (i, (cam, px)) in observations.iter().enumerate() {
            let [r0, r1] = dlt_rows(cam, px);
            a.set_row(2 * i, &r0);
            a.set_row(2 * i + 1, &r1);
        }
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("v_t requested");
        // 2n >= 4 rows, so there are always four singular values
        let sv: [f64; 4] = std::array::from_fn(|i| svd.singular_values[i]);
        let rows: [Vector4<f64>; 4] = std::array::from_fn(|i| v_t.row(i).transpose().fixed_rows::<4>(0).into());
        (sv, rows)
    };
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| singular[i].total_cmp(&singular[j]));
    let (s_min, s_next) = (singular[order[0]], singular[order[1]]);
    let s_max = singular[order[3]];
    if s_next - s_min < SINGULAR_GAP_TOL * s_max {
        return Err(GeometryError::DegenerateGeometry(
            "DLT system has no unique null vector".into(),
        ));
    }
    let x = null[order[0]];
    if x.w.abs() <= 1e-12 * x.norm() {
        return Err(GeometryError::DegenerateGeometry(
            "triangulated point at infinity".into(),
        ));
    }
    let point = WorldPoint::new(x.x / x.w, x.y / x.w, x.z / x.w);
    Ok(Triangulation {
        point,
        rms_reprojection: rms_reprojection(observations, &point),
    })
}

/// RMS pixel distance between each observation and the reprojection of `point`.
/// Uses the raw homogeneous division so points behind a camera still yield a number.
pub fn rms_reprojection(observations: &[(&Camera, Pixel)], point: &WorldPoint) -> f64 {
    let xh = point.to_homogeneous();
    let sum: f64 = observations
        .iter()
        .map(|(c, px)| {
            let y = c.projection_matrix() * xh;
            let (u, v) = (y.x / y.z, y.y / y.z);
            (u - px.u).powi(2) + (v - px.v).powi(2)
        })
        .sum();
    (sum / observations.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn ring(n: usize) -> Vec<Camera> {
        let target = WorldPoint::new(1.0, 0.5, 2.0);
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                let eye = WorldPoint::new(1.0 + 3.0 * a.cos(), 0.5 + 3.0 * a.sin(), 2.6);
                Camera::look_at(i, &eye, &target, &Vector3::z(), 2000.0, 2000.0, 1920, 1200).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_views_recover_point() {
        let cams = ring(4);
        let p = WorldPoint::new(1.0, 0.5, 2.0);
        let obs: Vec<_> = cams[..2].iter().map(|c| (c, c.project(&p).unwrap())).collect();
        let t = triangulate_dlt(&obs).unwrap();
        assert!((t.point - p).norm() < 1e-6);
        assert!(t.rms_reprojection < 1e-6);
    }

    #[test]
    fn four_views_agree_with_two() {
        let cams = ring(4);
        let p = WorldPoint::new(1.3, 0.2, 1.7);
        let obs: Vec<_> = cams.iter().map(|c| (c, c.project(&p).unwrap())).collect();
        let t4 = triangulate_dlt(&obs).unwrap();
        let t2 = triangulate_dlt(&obs[1..3]).unwrap();
        assert!((t4.point - t2.point).norm() < 1e-6);
        assert!((t4.point - p).norm() < 1e-6);
    }

    #[test]
    fn needs_two_distinct_cameras() {
        let cams = ring(2);
        let px = Pixel::new(0, 900.0, 600.0);
        assert!(matches!(
            triangulate_dlt(&[(&cams[0], px)]),
            Err(GeometryError::InsufficientViews(1))
        ));
        assert!(matches!(
            triangulate_dlt(&[(&cams[0], px), (&cams[0], px)]),
            Err(GeometryError::DuplicateCamera(0))
        ));
    }

    #[test]
    fn point_on_baseline_is_degenerate() {
        let a = Camera::look_at(0, &WorldPoint::new(0.0, 0.0, 1.0), &WorldPoint::new(1.0, 0.0, 1.0), &Vector3::z(), 1000.0, 1000.0, 1920, 1200).unwrap();
        let b = Camera::look_at(1, &WorldPoint::new(4.0, 0.0, 1.0), &WorldPoint::new(1.0, 0.0, 1.0), &Vector3::z(), 1000.0, 1000.0, 1920, 1200).unwrap();
        // both principal points look along the baseline
        let r = triangulate_dlt(&[
            (&a, Pixel::new(0, 960.0, 600.0)),
            (&b, Pixel::new(1, 960.0, 600.0)),
        ]);
        assert!(matches!(r, Err(GeometryError::DegenerateGeometry(_))), "{r:?}");
    }
}
