use std::collections::HashMap;

use crate::geometry::WorldPoint;

/// Uniform hash grid over 3D points for fixed-radius queries.
#[derive(Debug, Clone, Default)]
pub struct GridIndex {
    points: Vec<WorldPoint>,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl GridIndex {
    pub fn new(points: &[WorldPoint], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_key(p, cell)).or_default().push(i as u32);
        }
        Self {
            points: points.to_vec(),
            cell,
            cells,
        }
    }

    pub fn points(&self) -> &[WorldPoint] {
        &self.points
    }

    /// Calls `f` for each point within `radius` (inclusive) of `p`, in no particular
    /// order. Stops early when `f` returns `false`.
    pub fn for_each_within(&self, p: &WorldPoint, radius: f64, mut f: impl FnMut(usize) -> bool) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let k = cell_key(p, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let i = i as usize;
                        if (self.points[i] - p).norm_squared() <= r2 && !f(i) {
                            return;
                        }
                    }
                }
            }
        }
    }

    pub fn any_within(&self, p: &WorldPoint, radius: f64) -> bool {
        let mut found = false;
        self.for_each_within(p, radius, |_| {
            found = true;
            false
        });
        found
    }

    /// Indices within `radius` of `p`, ascending.
    pub fn within(&self, p: &WorldPoint, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(p, radius, |i| {
            out.push(i);
            true
        });
        out.sort_unstable();
        out
    }
}

pub(crate) fn cell_key(p: &WorldPoint, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}
