//! Gated linear assignment (Kuhn-Munkres with potentials, O(n³)).

use nalgebra::DMatrix;

/// A partial matching between rows and columns of a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of the costs of `pairs`.
    pub total_cost: f64,
}

impl Assignment {
    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|&(_, c)| c)
    }
}

/// Minimum-cost matching using only pairs with `cost < gate`.
///
/// Rows and columns that cannot (or should not) be matched are reported as
/// unmatched. With a finite gate the objective is equivalent to maximising
/// `Σ (gate - cost)` over admissible pairs; with `gate = ∞` it is the classic
/// rectangular assignment of `min(rows, cols)` pairs. Ties resolve toward lower
/// row and column indices.
pub fn hungarian(cost: &DMatrix<f64>, gate: f64) -> Assignment {
    let (rows, cols) = cost.shape();
    assert!(cost.iter().all(|c| c.is_finite()), "costs must be finite");
    let n = rows.max(cols);
    let pad = if gate.is_finite() { gate } else { 0.0 };
    let admissible = |i: usize, j: usize| i < rows && j < cols && cost[(i, j)] < gate;
    let entry = |i: usize, j: usize| if admissible(i, j) { cost[(i, j)] } else { pad };

    // 1-based potentials and column owners.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = entry(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            admissible(i, j).then_some((i, j))
        })
        .collect();
    pairs.sort_unstable();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(i, j) in &pairs {
        row_used[i] = true;
        col_used[j] = true;
    }
    Assignment {
        total_cost: pairs.iter().map(|&(i, j)| cost[(i, j)]).sum(),
        unmatched_rows: (0..rows).filter(|&i| !row_used[i]).collect(),
        unmatched_cols: (0..cols).filter(|&j| !col_used[j]).collect(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_chosen() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]);
        let a = hungarian(&c, f64::INFINITY);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn gate_excludes_everything() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]);
        let a = hungarian(&c, 0.5);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_rows, vec![0, 1]);
        assert_eq!(a.unmatched_cols, vec![0, 1]);
    }

    #[test]
    fn gate_prefers_two_cheap_pairs_over_one_expensive_swap() {
        // Unconstrained optimum would be (0,1),(1,0) = 2+2; gated one keeps (0,0) only.
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 9.0]);
        let a = hungarian(&c, 1.5);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unmatched_rows, vec![1]);
    }

    #[test]
    fn rectangular_matrices() {
        let c = DMatrix::from_row_slice(2, 3, &[5.0, 1.0, 7.0, 2.0, 1.5, 9.0]);
        let a = hungarian(&c, f64::INFINITY);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.unmatched_cols, vec![2]);
        let t = hungarian(&c.transpose(), f64::INFINITY);
        assert_eq!(t.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(t.unmatched_rows, vec![2]);
    }

    #[test]
    fn empty_matrix() {
        let a = hungarian(&DMatrix::zeros(0, 3), 1.0);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_cols, vec![0, 1, 2]);
    }
}
