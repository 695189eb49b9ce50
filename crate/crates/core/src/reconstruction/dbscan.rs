//! DBSCAN over 3D points with deterministic border assignment.
//!
//! Grid variant: cells have diagonal `eps`, so points sharing a cell are always
//! neighbours. A cell holding `min_pts` points is entirely core, and core points
//! of one cell always share a cluster; clusters are then unions of cells linked by
//! at least one close core pair.

use std::collections::HashMap;

use super::grid::cell_key;
use crate::geometry::WorldPoint;

struct Cells {
    side: f64,
    keys: Vec<[i64; 3]>,
    members: Vec<Vec<usize>>,
    lookup: HashMap<[i64; 3], usize>,
    /// Cell offsets whose closest points can be within `eps`.
    offsets: Vec<[i64; 3]>,
}

impl Cells {
    fn new(points: &[WorldPoint], eps: f64) -> Self {
        // shrink a hair so a cell diagonal never exceeds eps after rounding
        let side = eps / 3f64.sqrt() * (1.0 - 1e-12);
        let mut lookup: HashMap<[i64; 3], usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let k = cell_key(p, side);
            let c = *lookup.entry(k).or_insert_with(|| {
                keys.push(k);
                members.push(Vec::new());
                keys.len() - 1
            });
            members[c].push(i);
        }
        let reach = (eps / side).ceil() as i64;
        let mut offsets = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let gap = |d: i64| ((d.abs() - 1).max(0) as f64) * side;
                    if gap(dx).powi(2) + gap(dy).powi(2) + gap(dz).powi(2) <= eps * eps {
                        offsets.push([dx, dy, dz]);
                    }
                }
            }
        }
        Self { side, keys, members, lookup, offsets }
    }

    fn neighbours(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let k = self.keys[c];
        self.offsets
            .iter()
            .filter_map(move |o| self.lookup.get(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]]).copied())
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cluster label per point; `None` is noise.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Core points connected through `eps`-neighbourhoods share a cluster.
/// A border point joins the cluster of its lowest-indexed core neighbour.
/// Cluster labels are numbered in order of their lowest core index.
pub fn dbscan_labels(points: &[WorldPoint], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0 && min_pts >= 1);
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let eps2 = eps * eps;
    let cells = Cells::new(points, eps);
    debug_assert!(cells.side > 0.0);
    let close = |i: usize, j: usize| (points[i] - points[j]).norm_squared() <= eps2;

    let mut core = vec![false; n];
    for c in 0..cells.keys.len() {
        let own = &cells.members[c];
        if own.len() >= min_pts {
            for &i in own {
                core[i] = true;
            }
            continue;
        }
        for &i in own {
            let mut count = 0usize;
            'count: for d in cells.neighbours(c) {
                for &j in &cells.members[d] {
                    if close(i, j) {
                        count += 1;
                        if count >= min_pts {
                            break 'count;
                        }
                    }
                }
            }
            core[i] = count >= min_pts;
        }
    }

    // union cells through close core pairs
    let n_cells = cells.keys.len();
    let core_of: Vec<Vec<usize>> = cells
        .members
        .iter()
        .map(|m| m.iter().copied().filter(|&i| core[i]).collect())
        .collect();
    let mut parent: Vec<usize> = (0..n_cells).collect();
    for c in 0..n_cells {
        if core_of[c].is_empty() {
            continue;
        }
        for d in cells.neighbours(c) {
            if d <= c || core_of[d].is_empty() {
                continue;
            }
            let (rc, rd) = (find(&mut parent, c), find(&mut parent, d));
            if rc == rd {
                continue;
            }
            let linked = core_of[c].iter().any(|&i| core_of[d].iter().any(|&j| close(i, j)));
            if linked {
                parent[rc.max(rd)] = rc.min(rd);
            }
        }
    }

    // number clusters by lowest core index
    let mut label_of_root: HashMap<usize, usize> = HashMap::new();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut cell_of = vec![0usize; n];
    for (c, m) in cells.members.iter().enumerate() {
        for &i in m {
            cell_of[i] = c;
        }
    }
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, cell_of[i]);
            let next = label_of_root.len();
            labels[i] = Some(*label_of_root.entry(r).or_insert(next));
        }
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<usize> = None;
        for d in cells.neighbours(cell_of[i]) {
            for &j in &core_of[d] {
                if best.is_none_or(|b| j < b) && close(i, j) {
                    best = Some(j);
                }
            }
        }
        labels[i] = best.and_then(|b| labels[b]);
    }
    labels
}

/// Groups point indices by label, clusters in label order, members ascending.
pub fn groups(labels: &[Option<usize>]) -> Vec<Vec<usize>> {
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            out[*l].push(i);
        }
    }
    out
}
