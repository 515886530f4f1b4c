//! Minimum-cost maximum-cardinality assignment on a dense rectangular cost
//! matrix (Hungarian method with row/column potentials, O(r²c)).

use nalgebra::DMatrix;

/// Returns the matched `(row, col)` pairs, sorted by row, and their total cost.
///
/// Exactly `min(rows, cols)` pairs are returned. Costs must be finite.
pub fn min_cost_assignment(costs: &DMatrix<f64>) -> (Vec<(usize, usize)>, f64) {
    let (r, c) = costs.shape();
    if r == 0 || c == 0 {
        return (Vec::new(), 0.0);
    }
    let mut pairs = if r <= c {
        solve(r, c, |i, j| costs[(i, j)])
    } else {
        let mut t: Vec<(usize, usize)> = solve(c, r, |i, j| costs[(j, i)])
            .into_iter()
            .map(|(i, j)| (j, i))
            .collect();
        t.sort_unstable();
        t
    };
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| costs[(i, j)]).sum();
    (pairs, total)
}

/// Core routine for `rows <= cols`; indices 1-based internally, 0 is a sentinel.
fn solve(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    // owner[j]: row assigned to column j (0 = none).
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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

    (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}
