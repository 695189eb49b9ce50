use nalgebra::Vector3;
use rand::seq::index::sample;

use super::{RawPoint, RawPointSet, ReconstructionConfig};
use crate::detection::{ActiveMap, DetectionSet, Mask};
use crate::geometry::{triangulate_dlt, ActivePixels, Camera, EpipolarPair, Pixel, MIN_DEPTH};
use crate::seed;

/// All pixel centers of `mask` when it has at most `cap` pixels, otherwise a
/// uniform random subset of exactly `cap` of them (in run order).
pub fn subsample_mask(mask: &Mask, cap: usize, seed: u64) -> Vec<(f64, f64)> {
    assert!(cap >= 1, "mask cap must be at least 1");
    let n = mask.area();
    if n <= cap {
        return mask.pixels().collect();
    }
    let mut idx = sample(&mut seed::rng(seed, &[]), n, cap).into_vec();
    idx.sort_unstable();
    let mut out = Vec::with_capacity(cap);
    let mut it = idx.into_iter().peekable();
    let mut offset = 0usize;
    for r in mask.runs() {
        let len = r.len as usize;
        while let Some(&k) = it.peek() {
            if k >= offset + len {
                break;
            }
            out.push((
                r.start as f64 + (k - offset) as f64 + 0.5,
                r.row as f64 + 0.5,
            ));
            it.next();
        }
        offset += len;
    }
    out
}

struct ViewData<'a> {
    camera: &'a Camera,
    /// Subsampled pixels per mask.
    samples: Vec<Vec<(f64, f64)>>,
    /// Per-mask sample bounding boxes `(umin, vmin, umax, vmax)`.
    boxes: Vec<(f64, f64, f64, f64)>,
}

fn sample_box(s: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    s.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |b, &(u, v)| (b.0.min(u), b.1.min(v), b.2.max(u), b.3.max(v)),
    )
}

/// Smallest absolute value of the line over the box corners, or zero when the
/// line crosses the box.
fn line_box_distance(l: &Vector3<f64>, b: &(f64, f64, f64, f64)) -> f64 {
    let s = [
        l.x * b.0 + l.y * b.1 + l.z,
        l.x * b.2 + l.y * b.1 + l.z,
        l.x * b.0 + l.y * b.3 + l.z,
        l.x * b.2 + l.y * b.3 + l.z,
    ];
    if s.iter().all(|&x| x > 0.0) || s.iter().all(|&x| x < 0.0) {
        s.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
    } else {
        0.0
    }
}

/// Cross-view pixel matching and triangulation for one frame.
///
/// Every pair of subsampled mask pixels from two cameras with symmetric epipolar
/// distance below `eps_px` is triangulated. The point is kept when it lies in front
/// of both cameras, inside `bounds`, and passes the multi-view confirmation of
/// `third_view_consistent`.
pub fn match_and_triangulate(
    detections: &DetectionSet,
    cameras: &[Camera],
    cfg: &ReconstructionConfig,
    seed: u64,
) -> RawPointSet {
    let mut views: Vec<ViewData> = Vec::new();
    let mut active: Vec<ActiveMap> = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let dets = detections.camera(cam.id());
        let masks: &[Mask] = dets.map_or(&[], |d| &d.masks);
        active.push(ActiveMap::new(cam.id(), masks));
        if masks.is_empty() {
            continue;
        }
        let samples: Vec<Vec<(f64, f64)>> = masks
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let s = seed::derive(seed, &[detections.frame as u64, cam.id() as u64, k as u64]);
                subsample_mask(m, cfg.mask_cap, s)
            })
            .collect();
        let boxes = samples.iter().map(|s| sample_box(s)).collect();
        views.push(ViewData {
            camera: cam,
            samples,
            boxes,
        });
    }

    let mut points = Vec::new();
    let gate_one_side = 2.0 * cfg.eps_px;
    for ia in 0..views.len() {
        for ib in ia + 1..views.len() {
            let (va, vb) = (&views[ia], &views[ib]);
            let (ca, cb) = if va.camera.id() <= vb.camera.id() {
                (va, vb)
            } else {
                (vb, va)
            };
            let Ok(pair) = EpipolarPair::new(ca.camera, cb.camera) else {
                continue;
            };
            let lines_in_a: Vec<Vec<Vector3<f64>>> = cb
                .samples
                .iter()
                .map(|s| s.iter().map(|&(u, v)| pair.line_in_a(u, v)).collect())
                .collect();
            for sa in &ca.samples {
                for &(ua, va_) in sa {
                    let lb = pair.line_in_b(ua, va_);
                    for (mb, sb) in cb.samples.iter().enumerate() {
                        if line_box_distance(&lb, &cb.boxes[mb]) >= gate_one_side {
                            continue;
                        }
                        for (k, &(ub, vb_)) in sb.iter().enumerate() {
                            let db = (lb.x * ub + lb.y * vb_ + lb.z).abs();
                            if db >= gate_one_side {
                                continue;
                            }
                            let la = &lines_in_a[mb][k];
                            let da = (la.x * ua + la.y * va_ + la.z).abs();
                            if 0.5 * (da + db) >= cfg.eps_px {
                                continue;
                            }
                            let pa = Pixel::new(ca.camera.id(), ua, va_);
                            let pb = Pixel::new(cb.camera.id(), ub, vb_);
                            let Ok(tri) = triangulate_dlt(&[(ca.camera, pa), (cb.camera, pb)]) else {
                                continue;
                            };
                            // rays can cross behind a camera
                            if ca.camera.depth(&tri.point) <= MIN_DEPTH || cb.camera.depth(&tri.point) <= MIN_DEPTH {
                                continue;
                            }
                            if !in_bounds(&tri.point, &cfg.bounds) {
                                continue;
                            }
                            if third_view_consistent(
                                &tri.point,
                                ca.camera.id(),
                                cb.camera.id(),
                                cameras,
                                &active,
                                cfg.trifocal_tol,
                                cfg.trifocal_max_misses,
                            ) {
                                points.push(RawPoint {
                                    position: tri.point,
                                    views: [pa, pb],
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    RawPointSet {
        frame: detections.frame,
        points,
    }
}

fn in_bounds(p: &crate::geometry::WorldPoint, bounds: &Option<[[f64; 3]; 2]>) -> bool {
    match bounds {
        Some([lo, hi]) => (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]),
        None => true,
    }
}

/// Trifocal confirmation over every covering camera other than the matched pair:
/// at most `max_misses` of them may lack an active pixel near the reprojection,
/// and at least one must have one. Points no other camera covers pass.
fn third_view_consistent(
    point: &crate::geometry::WorldPoint,
    a: usize,
    b: usize,
    cameras: &[Camera],
    active: &[ActiveMap],
    tol: f64,
    max_misses: usize,
) -> bool {
    let (mut confirmed, mut missed) = (0usize, 0usize);
    for (cam, map) in cameras.iter().zip(active) {
        if cam.id() == a || cam.id() == b {
            continue;
        }
        let Some(px) = cam.project(point) else { continue };
        if !cam.contains(px.u, px.v) {
            continue;
        }
        if map.any_within(px.u, px.v, tol) {
            confirmed += 1;
        } else {
            missed += 1;
            if missed > max_misses {
                return false;
            }
        }
    }
    confirmed > 0 || missed == 0
}
