//! Per-frame, per-camera silhouette masks stored as row runs.

use serde::{Deserialize, Serialize};

use crate::geometry::{ActivePixels, Pixel};

/// Horizontal run of foreground pixels `[start, start + len)` on image row `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Run {
    pub row: u32,
    pub start: u32,
    pub len: u32,
}

impl Run {
    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

/// A silhouette mask. Runs are kept sorted by `(row, start)`, non-empty and
/// non-overlapping, with touching runs on a row merged.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    runs: Vec<Run>,
    area: usize,
    centroid: (f64, f64),
}

impl Mask {
    pub fn from_runs(mut runs: Vec<Run>) -> Self {
        runs.retain(|r| r.len > 0);
        runs.sort_unstable();
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(last) if last.row == r.row && r.start <= last.end() => {
                    let end = last.end().max(r.end());
                    last.len = end - last.start;
                }
                _ => merged.push(r),
            }
        }
        let mut area = 0usize;
        let (mut su, mut sv) = (0.0, 0.0);
        for r in &merged {
            let n = r.len as f64;
            area += r.len as usize;
            // sum of pixel-center u over the run
            su += n * (r.start as f64 + 0.5) + n * (n - 1.0) / 2.0;
            sv += n * (r.row as f64 + 0.5);
        }
        let centroid = if area > 0 {
            (su / area as f64, sv / area as f64)
        } else {
            (f64::NAN, f64::NAN)
        };
        Self {
            runs: merged,
            area,
            centroid,
        }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    /// Mean pixel-center position `(u, v)`.
    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    /// `(min_col, min_row, max_col_exclusive, max_row_exclusive)`.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let first = self.runs.first()?;
        let last = self.runs.last()?;
        let min_c = self.runs.iter().map(|r| r.start).min()?;
        let max_c = self.runs.iter().map(Run::end).max()?;
        Some((min_c, first.row, max_c, last.row + 1))
    }

    /// Pixel centers in run order.
    pub fn pixels(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.runs.iter().flat_map(|r| {
            (r.start..r.end()).map(move |c| (c as f64 + 0.5, r.row as f64 + 0.5))
        })
    }

    /// Center of the `k`-th pixel in run order.
    pub fn nth_pixel(&self, mut k: usize) -> Option<(f64, f64)> {
        for r in &self.runs {
            if k < r.len as usize {
                return Some((r.start as f64 + k as f64 + 0.5, r.row as f64 + 0.5));
            }
            k -= r.len as usize;
        }
        None
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        let i = self.runs.partition_point(|r| (r.row, r.start) <= (row, col));
        i > 0 && {
            let r = &self.runs[i - 1];
            r.row == row && col < r.end()
        }
    }

    pub fn overlaps(&self, other: &Mask) -> bool {
        let (Some(a), Some(b)) = (self.bbox(), other.bbox()) else {
            return false;
        };
        if a.0 >= b.2 || b.0 >= a.2 || a.1 >= b.3 || b.1 >= a.3 {
            return false;
        }
        let (mut i, mut j) = (0, 0);
        while i < self.runs.len() && j < other.runs.len() {
            let (r, s) = (&self.runs[i], &other.runs[j]);
            if r.row != s.row {
                if r.row < s.row {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            if r.start < s.end() && s.start < r.end() {
                return true;
            }
            if r.end() <= s.end() {
                i += 1;
            } else {
                j += 1;
            }
        }
        false
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let mut runs = self.runs.clone();
        runs.extend_from_slice(&other.runs);
        Mask::from_runs(runs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraDetections {
    pub camera_id: usize,
    pub masks: Vec<Mask>,
}

/// All masks of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub frame: usize,
    pub cameras: Vec<CameraDetections>,
}

impl DetectionSet {
    pub fn mask_count(&self) -> usize {
        self.cameras.iter().map(|c| c.masks.len()).sum()
    }

    pub fn camera(&self, id: usize) -> Option<&CameraDetections> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }
}

/// Union of all foreground pixels of one camera, indexed by row for radius queries.
#[derive(Debug, Clone, Default)]
pub struct ActiveMap {
    camera_id: usize,
    /// Runs `(start, end)` per row, sorted; rows past the last run are absent.
    rows: Vec<Vec<(u32, u32)>>,
}

impl ActiveMap {
    pub fn new(camera_id: usize, masks: &[Mask]) -> Self {
        let height = masks.iter().filter_map(|m| m.runs().last()).map(|r| r.row as usize + 1).max().unwrap_or(0);
        let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); height];
        for m in masks {
            for r in m.runs() {
                rows[r.row as usize].push((r.start, r.end()));
            }
        }
        for runs in rows.iter_mut() {
            runs.sort_unstable();
        }
        Self { camera_id, rows }
    }

    pub fn camera_id(&self) -> usize {
        self.camera_id
    }
}

impl ActivePixels for ActiveMap {
    fn any_within(&self, u: f64, v: f64, tol: f64) -> bool {
        if !(u.is_finite() && v.is_finite()) {
            return false;
        }
        let lo = (v - tol - 0.5).ceil().max(0.0);
        let hi = v + tol - 0.5;
        if hi < lo {
            return false;
        }
        let last = (hi.floor() as usize).min(self.rows.len().saturating_sub(1));
        for row in lo as usize..=last {
            let runs = match self.rows.get(row) {
                Some(r) if !r.is_empty() => r,
                _ => continue,
            };
            let dy = row as f64 + 0.5 - v;
            let dx = (tol * tol - dy * dy).max(0.0).sqrt();
            // pixel centers c + 0.5 with c in [start, end)
            let cmin = (u - dx - 0.5).ceil();
            let cmax = (u + dx - 0.5).floor();
            if cmax < cmin || cmax < 0.0 {
                continue;
            }
            let (cmin, cmax) = (cmin.max(0.0) as u32, cmax as u32);
            if runs.iter().any(|&(s, e)| s <= cmax && cmin < e) {
                return true;
            }
        }
        false
    }
}

/// One line of the detections file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub frame: usize,
    pub camera: usize,
    pub mask: usize,
    pub centroid: [f64; 2],
    pub area: usize,
    /// `[row, start, len]` triples.
    pub rle: Vec<[u32; 3]>,
}

impl MaskRecord {
    pub fn new(frame: usize, camera: usize, index: usize, mask: &Mask) -> Self {
        let (u, v) = mask.centroid();
        Self {
            frame,
            camera,
            mask: index,
            centroid: [u, v],
            area: mask.area(),
            rle: mask.runs().iter().map(|r| [r.row, r.start, r.len]).collect(),
        }
    }

    pub fn to_mask(&self) -> Mask {
        Mask::from_runs(
            self.rle
                .iter()
                .map(|&[row, start, len]| Run { row, start, len })
                .collect(),
        )
    }
}

impl DetectionSet {
    pub fn records(&self) -> impl Iterator<Item = MaskRecord> + '_ {
        self.cameras.iter().flat_map(move |c| {
            c.masks
                .iter()
                .enumerate()
                .map(move |(k, m)| MaskRecord::new(self.frame, c.camera_id, k, m))
        })
    }

    /// Groups records (any order) into per-frame sets sorted by frame, camera and mask index.
    pub fn from_records(records: Vec<MaskRecord>) -> Vec<DetectionSet> {
        let mut records = records;
        records.sort_by_key(|r| (r.frame, r.camera, r.mask));
        let mut out: Vec<DetectionSet> = Vec::new();
        for r in records {
            if out.last().is_none_or(|s| s.frame != r.frame) {
                out.push(DetectionSet {
                    frame: r.frame,
                    cameras: Vec::new(),
                });
            }
            let set = out.last_mut().expect("pushed above");
            if set.cameras.last().is_none_or(|c| c.camera_id != r.camera) {
                set.cameras.push(CameraDetections {
                    camera_id: r.camera,
                    masks: Vec::new(),
                });
            }
            set.cameras
                .last_mut()
                .expect("pushed above")
                .masks
                .push(r.to_mask());
        }
        out
    }
}

/// Convenience for tests and small tools: every pixel center of `mask` as a [`Pixel`].
pub fn mask_pixels(camera_id: usize, mask: &Mask) -> Vec<Pixel> {
    mask.pixels().map(|(u, v)| Pixel::new(camera_id, u, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(c0: u32, r0: u32, n: u32) -> Mask {
        Mask::from_runs((r0..r0 + n).map(|row| Run { row, start: c0, len: n }).collect())
    }

    #[test]
    fn area_and_centroid() {
        let m = square(10, 20, 4);
        assert_eq!(m.area(), 16);
        assert_eq!(m.centroid(), (12.0, 22.0));
        assert_eq!(m.bbox(), Some((10, 20, 14, 24)));
        assert_eq!(m.pixels().count(), 16);
        assert_eq!(m.nth_pixel(5), Some((11.5, 21.5)));
        assert_eq!(m.nth_pixel(16), None);
    }

    #[test]
    fn runs_are_normalised() {
        let m = Mask::from_runs(vec![
            Run { row: 1, start: 5, len: 3 },
            Run { row: 1, start: 0, len: 5 },
            Run { row: 0, start: 2, len: 0 },
        ]);
        assert_eq!(m.runs(), &[Run { row: 1, start: 0, len: 8 }]);
    }

    #[test]
    fn overlap_and_union() {
        let a = square(0, 0, 4);
        let b = square(3, 3, 4);
        let c = square(4, 0, 2);
        assert!(a.overlaps(&b) && b.overlaps(&a));
        assert!(!a.overlaps(&c));
        let u = a.union(&b);
        assert_eq!(u.area(), 16 + 16 - 1);
        assert!(u.contains(0, 0) && u.contains(6, 6) && !u.contains(6, 0));
    }

    #[test]
    fn active_map_radius_query() {
        let map = ActiveMap::new(0, &[square(100, 100, 1)]);
        // the single pixel center is (100.5, 100.5)
        assert!(map.any_within(100.5, 100.5, 0.1));
        assert!(map.any_within(103.4, 100.5, 3.0));
        assert!(!map.any_within(103.6, 100.5, 3.0));
        assert!(map.any_within(102.5, 102.5, 3.0));
        assert!(!map.any_within(102.7, 102.7, 3.0));
        let brute = mask_pixels(0, &square(100, 100, 1));
        for (u, v) in [(98.0, 99.0), (103.0, 103.0), (100.0, 97.6)] {
            assert_eq!(map.any_within(u, v, 3.0), brute.any_within(u, v, 3.0));
        }
    }

    #[test]
    fn records_round_trip() {
        let set = DetectionSet {
            frame: 7,
            cameras: vec![CameraDetections { camera_id: 2, masks: vec![square(1, 1, 3), square(9, 9, 2)] }],
        };
        let recs: Vec<MaskRecord> = set.records().collect();
        let line = serde_json::to_string(&recs[0]).unwrap();
        let back: MaskRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.area, 9);
        let sets = DetectionSet::from_records(recs);
        assert_eq!(sets, vec![set]);
    }
}
