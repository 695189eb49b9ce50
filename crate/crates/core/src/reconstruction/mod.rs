//! Per-frame multi-view reconstruction: cross-view pixel matching and
//! triangulation, temporal ghost filtering, and density clustering into the
//! cluster centers consumed by the tracker.

mod dbscan;
mod grid;
mod matching;

pub use dbscan::{dbscan_labels, groups};
pub use grid::GridIndex;
pub use matching::{match_and_triangulate, subsample_mask};

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionSet;
use crate::geometry::{Camera, Pixel, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    /// Symmetric epipolar distance gate for pixel pairs, pixels.
    pub eps_px: f64,
    /// Third-view reprojection tolerance, pixels.
    pub trifocal_tol: f64,
    /// Covering views (beyond the matched pair) allowed to fail confirmation; at
    /// least one must confirm whenever any covers the point.
    pub trifocal_max_misses: usize,
    /// Ghost filter half-window, frames.
    pub ghost_window: usize,
    /// Ghost filter neighbour radius, meters.
    pub ghost_radius: f64,
    /// DBSCAN neighbourhood radius, meters.
    pub dbscan_eps: f64,
    /// DBSCAN core threshold (the point itself counts).
    pub min_pts: usize,
    /// Masks with more pixels than this are subsampled.
    pub mask_cap: usize,
    /// Axis-aligned box `[min, max]` outside which triangulated points are dropped;
    /// `None` keeps everything.
    pub bounds: Option<[[f64; 3]; 2]>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            eps_px: 3.0,
            trifocal_tol: 3.0,
            trifocal_max_misses: 0,
            ghost_window: 2,
            ghost_radius: 0.15,
            dbscan_eps: 0.12,
            min_pts: 4,
            mask_cap: 400,
            // default aviary with a 0.25 m margin
            bounds: Some([[-0.25, -0.25, -0.25], [6.25, 2.65, 2.65]]),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.eps_px, self.trifocal_tol, self.ghost_radius, self.dbscan_eps]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err("reconstruction distances must be positive".into());
        }
        if let Some([lo, hi]) = self.bounds {
            if (0..3).any(|k| !(lo[k] < hi[k])) {
                return Err("reconstruction bounds must have min < max on every axis".into());
            }
        }
        if self.ghost_window == 0 || self.min_pts == 0 || self.mask_cap == 0 {
            return Err("ghost_window, min_pts and mask_cap must be at least 1".into());
        }
        Ok(())
    }
}

/// A triangulated point and the two pixels it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub position: WorldPoint,
    pub views: [Pixel; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawPointSet {
    pub frame: usize,
    pub points: Vec<RawPoint>,
}

impl RawPointSet {
    pub fn positions(&self) -> Vec<WorldPoint> {
        self.points.iter().map(|p| p.position).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub frame: usize,
    pub id: usize,
    /// Mean of the member points.
    pub center: WorldPoint,
    /// Indices into the point set that was clustered.
    pub members: Vec<usize>,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameClusters {
    pub frame: usize,
    pub clusters: Vec<Cluster>,
}

/// Keeps the points of `target` that have a neighbour within `radius` in at least
/// one of `neighbours` (the other frames of the window).
pub fn filter_ghosts(target: &RawPointSet, neighbours: &[&RawPointSet], radius: f64) -> RawPointSet {
    let grids: Vec<GridIndex> = neighbours.iter().map(|s| GridIndex::new(&s.positions(), radius)).collect();
    filter_with_grids(target, &grids.iter().collect::<Vec<_>>(), radius)
}

fn filter_with_grids(target: &RawPointSet, grids: &[&GridIndex], radius: f64) -> RawPointSet {
    RawPointSet {
        frame: target.frame,
        points: target
            .points
            .iter()
            .filter(|p| grids.iter().any(|g| g.any_within(&p.position, radius)))
            .copied()
            .collect(),
    }
}

/// DBSCAN clustering of a point set; noise is discarded.
pub fn cluster_points(points: &RawPointSet, eps: f64, min_pts: usize) -> Vec<Cluster> {
    let positions = points.positions();
    let labels = dbscan_labels(&positions, eps, min_pts);
    groups(&labels)
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let sum = members
                .iter()
                .fold(nalgebra::Vector3::zeros(), |acc, &i| acc + positions[i].coords);
            Cluster {
                frame: points.frame,
                id,
                center: (sum / members.len() as f64).into(),
                n_points: members.len(),
                members,
            }
        })
        .collect()
}

/// Streaming reconstruction over consecutive frames. Frames are triangulated in
/// parallel batches; each frame is ghost-filtered once its `±ghost_window`
/// neighbours are available, then clustered.
pub struct Reconstructor<'a> {
    cameras: &'a [Camera],
    cfg: ReconstructionConfig,
    seed: u64,
    /// Triangulated frames with their ghost-radius grids.
    window: VecDeque<(RawPointSet, GridIndex)>,
    /// Frame index of the next set to filter within `window`.
    cursor: usize,
    out: Vec<FrameClusters>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(cameras: &'a [Camera], cfg: ReconstructionConfig, seed: u64) -> Self {
        Self {
            cameras,
            cfg,
            seed,
            window: VecDeque::new(),
            cursor: 0,
            out: Vec::new(),
        }
    }

    /// Adds a batch of frames in increasing frame order; frames missing from the
    /// sequence are treated as empty.
    pub fn push_batch(&mut self, batch: &[DetectionSet]) {
        let radius = self.cfg.ghost_radius;
        let sets: Vec<(RawPointSet, GridIndex)> = batch
            .par_iter()
            .map(|d| {
                let s = match_and_triangulate(d, self.cameras, &self.cfg, self.seed);
                let g = GridIndex::new(&s.positions(), radius);
                (s, g)
            })
            .collect();
        for (s, g) in sets {
            if let Some((last, _)) = self.window.back() {
                assert!(s.frame > last.frame, "frames must be pushed in increasing order");
                for f in last.frame + 1..s.frame {
                    self.window.push_back((RawPointSet { frame: f, points: Vec::new() }, GridIndex::new(&[], radius)));
                }
            }
            self.window.push_back((s, g));
        }
        self.drain(false);
    }

    fn drain(&mut self, finished: bool) {
        let w = self.cfg.ghost_window;
        let mut ready = Vec::new();
        while self.cursor < self.window.len()
            && (finished || self.cursor + w < self.window.len())
        {
            ready.push(self.cursor);
            self.cursor += 1;
        }
        let window = &self.window;
        let cfg = self.cfg;
        let done: Vec<FrameClusters> = ready
            .par_iter()
            .map(|&i| {
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(window.len() - 1);
                let neighbours: Vec<&GridIndex> =
                    (lo..=hi).filter(|&j| j != i).map(|j| &window[j].1).collect();
                let kept = filter_with_grids(&window[i].0, &neighbours, cfg.ghost_radius);
                FrameClusters {
                    frame: kept.frame,
                    clusters: cluster_points(&kept, cfg.dbscan_eps, cfg.min_pts),
                }
            })
            .collect();
        self.out.extend(done);
        // keep only what later frames still need
        while self.cursor > w {
            self.window.pop_front();
            self.cursor -= 1;
        }
    }

    pub fn finish(mut self) -> Vec<FrameClusters> {
        self.drain(true);
        self.out
    }
}

/// Convenience wrapper over [`Reconstructor`] for in-memory detections.
pub fn reconstruct_sequence(
    detections: &[DetectionSet],
    cameras: &[Camera],
    cfg: &ReconstructionConfig,
    seed: u64,
) -> Vec<FrameClusters> {
    let mut r = Reconstructor::new(cameras, *cfg, seed);
    for chunk in detections.chunks(32) {
        r.push_batch(chunk);
    }
    r.finish()
}
