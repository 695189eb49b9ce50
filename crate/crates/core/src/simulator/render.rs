use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{GroundTruthScene, NoiseModel};
use crate::detection::{CameraDetections, DetectionSet, Mask, Run};
use crate::geometry::{Camera, WorldPoint, MIN_DEPTH};
use crate::seed;

/// Bird body semi-axes: 0.2 x 0.08 x 0.08 m.
pub const BODY_SEMI_AXES: [f64; 3] = [0.1, 0.04, 0.04];
/// Shadow blob semi-axes: body footprint, nearly flat.
const SHADOW_SEMI_AXES: [f64; 3] = [0.1, 0.05, 0.005];
/// Frames over which a shadow keeps its on/off state.
const SHADOW_BLOCK: usize = 10;
/// Birds lower than this cast no separate shadow.
const SHADOW_MIN_HEIGHT: f64 = 0.3;

const TAG_MISS: u64 = 1;
const TAG_SHADOW: u64 = 2;
const TAG_JITTER: u64 = 3;

/// An ellipsoid with orthonormal `axes` (columns) and `semi` lengths along them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub center: WorldPoint,
    pub axes: Matrix3<f64>,
    pub semi: [f64; 3],
}

impl Body {
    /// A body elongated along `heading`.
    pub fn oriented(center: WorldPoint, heading: &Vector3<f64>, semi: [f64; 3]) -> Self {
        let x = heading.try_normalize(1e-12).unwrap_or_else(Vector3::x);
        let helper = if x.z.abs() < 0.9 { Vector3::z() } else { Vector3::y() };
        let y = helper.cross(&x).normalize();
        let z = x.cross(&y);
        Self { center, axes: Matrix3::from_columns(&[x, y, z]), semi }
    }

    /// Shape matrix `M` with the ellipsoid `{X : (X - c)' M^-1 (X - c) <= 1}`.
    fn shape(&self) -> Matrix3<f64> {
        let d = Matrix3::from_diagonal(&Vector3::from(self.semi).component_mul(&Vector3::from(self.semi)));
        self.axes * d * self.axes.transpose()
    }

    /// Silhouette in `camera`, clipped to the image; `None` when the ellipsoid is not
    /// entirely in front of the camera or misses the image.
    pub fn silhouette(&self, camera: &Camera, offset: (f64, f64)) -> Option<Mask> {
        let m = self.shape();
        let axis = camera.rotation().row(2).transpose();
        let reach = (axis.transpose() * m * axis)[(0, 0)].sqrt();
        if camera.depth(&self.center) - reach <= MIN_DEPTH {
            return None;
        }
        let c = self.center.coords;
        let mut q = Matrix4::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(m - c * c.transpose()));
        q.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c));
        q.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-c.transpose()));
        q[(3, 3)] = -1.0;
        let p = camera.projection_matrix();
        let dual = p * q * p.transpose();
        let conic = dual.try_inverse()?;

        // bounding rows from horizontal tangent lines
        let (v0, v1) = quadratic_roots(dual[(2, 2)], -2.0 * dual[(1, 2)], dual[(1, 1)])?;
        let (du, dv) = offset;
        let h = camera.height() as f64;
        let w = camera.width() as f64;
        let r0 = ((v0 + dv - 0.5).ceil()).max(0.0);
        let r1 = ((v1 + dv - 0.5).floor()).min(h - 1.0);
        let mut runs = Vec::new();
        let mut row = r0;
        while row <= r1 {
            let v = row + 0.5 - dv;
            let a = conic[(0, 0)];
            let b = 2.0 * (conic[(0, 1)] * v + conic[(0, 2)]);
            let cc = conic[(1, 1)] * v * v + 2.0 * conic[(1, 2)] * v + conic[(2, 2)];
            if let Some((u0, u1)) = quadratic_roots(a, b, cc) {
                let c0 = (u0 + du - 0.5).ceil().max(0.0);
                let c1 = (u1 + du - 0.5).floor().min(w - 1.0);
                if c1 >= c0 {
                    runs.push(Run { row: row as u32, start: c0 as u32, len: (c1 - c0) as u32 + 1 });
                }
            }
            row += 1.0;
        }
        let mask = Mask::from_runs(runs);
        (!mask.is_empty()).then_some(mask)
    }
}

/// Real roots of `a x^2 + b x + c`, ascending.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a == 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if !(disc >= 0.0) {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pairing
    let q = -0.5 * (b + b.signum() * s);
    let (x0, x1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((x0.min(x1), x0.max(x1)))
}

/// Shadow on the floor below a bird, displaced as if lit from above at an angle.
fn shadow_body(center: &WorldPoint, heading: &Vector3<f64>, volume: &[f64; 3]) -> Body {
    let x = (center.x + 0.3 * center.z).clamp(0.0, volume[0]);
    let y = (center.y + 0.15 * center.z).clamp(0.0, volume[1]);
    let flat = Vector3::new(heading.x, heading.y, 0.0);
    Body::oriented(WorldPoint::new(x, y, 0.005), &flat, SHADOW_SEMI_AXES)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn merge_overlapping(masks: Vec<Mask>) -> Vec<Mask> {
    let n = masks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if masks[i].overlaps(&masks[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut out: Vec<Option<Mask>> = vec![None; n];
    for (i, m) in masks.into_iter().enumerate() {
        let r = find(&mut parent, i);
        out[r] = Some(match out[r].take() {
            Some(acc) => acc.union(&m),
            None => m,
        });
    }
    out.into_iter().flatten().collect()
}

/// Detections of one frame. Birds are rendered in id order, shadows after them;
/// masks of a camera keep that order (merged masks take the slot of their first
/// member).
pub fn render_frame(
    scene: &GroundTruthScene,
    frame: usize,
    cameras: &[Camera],
    noise: &NoiseModel,
    seed: u64,
) -> DetectionSet {
    let n_birds = scene.birds.len();
    let mut bodies: Vec<(usize, Body)> = scene
        .birds
        .iter()
        .map(|b| (b.id, Body::oriented(b.centroid[frame], &b.heading[frame], BODY_SEMI_AXES)))
        .collect();
    let shadow_p = noise.false_positive_rate / n_birds as f64;
    if shadow_p > 0.0 {
        for b in &scene.birds {
            let c = b.centroid[frame];
            let block = (frame / SHADOW_BLOCK) as u64;
            if c.z > SHADOW_MIN_HEIGHT && seed::unit(seed, &[TAG_SHADOW, b.id as u64, block]) < shadow_p {
                bodies.push((usize::MAX, shadow_body(&c, &b.heading[frame], &scene.volume)));
            }
        }
    }

    let cameras_out = cameras
        .iter()
        .map(|cam| {
            let mut rng = seed::rng(seed, &[TAG_JITTER, frame as u64, cam.id() as u64]);
            let mut masks = Vec::new();
            for (k, (bird, body)) in bodies.iter().enumerate() {
                let offset = if noise.centroid_jitter > 0.0 {
                    let du: f64 = rng.sample(StandardNormal);
                    let dv: f64 = rng.sample(StandardNormal);
                    (du * noise.centroid_jitter, dv * noise.centroid_jitter)
                } else {
                    (0.0, 0.0)
                };
                if *bird != usize::MAX
                    && noise.miss_rate > 0.0
                    && seed::unit(seed, &[TAG_MISS, frame as u64, cam.id() as u64, k as u64]) < noise.miss_rate
                {
                    continue;
                }
                if let Some(m) = body.silhouette(cam, offset) {
                    masks.push(m);
                }
            }
            if noise.merge_occlusions {
                masks = merge_overlapping(masks);
            }
            CameraDetections { camera_id: cam.id(), masks }
        })
        .filter(|c| !c.masks.is_empty())
        .collect();
    DetectionSet { frame, cameras: cameras_out }
}

/// Renders `frames` in parallel.
pub fn render_detections(
    scene: &GroundTruthScene,
    cameras: &[Camera],
    noise: &NoiseModel,
    seed: u64,
    frames: std::ops::Range<usize>,
) -> Vec<DetectionSet> {
    frames
        .into_par_iter()
        .map(|f| render_frame(scene, f, cameras, noise, seed))
        .collect()
}
