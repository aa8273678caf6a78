//! Rectangular linear assignment.
//!
//! [`hungarian`] is the O(r²c) shortest-augmenting-path form of the Hungarian
//! method with dual potentials. When there are more rows than columns the
//! problem is solved on the transpose, so exactly `min(r, c)` pairs are
//! always returned. [`brute_force_assignment`] enumerates every injection and
//! exists as a test oracle.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `min(rows, cols)` accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Matched (row, column) pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub unmatched_rows: Vec<usize>,
}

impl Assignment {
    fn from_row_map(cost: ArrayView2<'_, f64>, row_to_col: &[Option<usize>]) -> Self {
        let mut pairs = Vec::new();
        let mut unmatched_rows = Vec::new();
        for (r, c) in row_to_col.iter().enumerate() {
            match c {
                Some(c) => pairs.push((r, *c)),
                None => unmatched_rows.push(r),
            }
        }
        let total_cost = pairs.iter().map(|&(r, c)| cost[[r, c]]).sum();
        Self {
            pairs,
            total_cost,
            unmatched_rows,
        }
    }

    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

fn check_finite(cost: ArrayView2<'_, f64>) -> Result<()> {
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidCostMatrix(format!("non-finite entry {v}")));
    }
    Ok(())
}

/// Minimum-cost one-to-one matching of rows to columns.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    check_finite(cost)?;
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Ok(Assignment::from_row_map(cost, &vec![None; rows]));
    }
    let row_to_col = if rows <= cols {
        solve_wide(cost)
    } else {
        let col_to_row = solve_wide(cost.reversed_axes());
        let mut map = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            map[r.expect("every column matched on the transpose")] = Some(c);
        }
        map
    };
    Ok(Assignment::from_row_map(cost, &row_to_col))
}

/// Requires `rows <= cols`; every row ends up matched.
fn solve_wide(cost: ArrayView2<'_, f64>) -> Vec<Option<usize>> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);

    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = Some(j - 1);
        }
    }
    row_to_col
}

/// Exhaustive search over all injections from the smaller side into the
/// larger one. Among equal-cost matchings the lexicographically first is kept.
pub fn brute_force_assignment(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    check_finite(cost)?;
    let (rows, cols) = cost.dim();
    let k = rows.min(cols);
    if k > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleSizeLimit(k));
    }
    if k == 0 {
        return Ok(Assignment::from_row_map(cost, &vec![None; rows]));
    }

    // Enumerate from the smaller side so the search is P(large, small).
    let transposed = rows > cols;
    let view = if transposed {
        cost.reversed_axes()
    } else {
        cost
    };
    let (small, large) = (view.len_of(Axis(0)), view.len_of(Axis(1)));

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(small);
    let mut used = vec![false; large];
    enumerate(view, &mut current, &mut used, &mut best);
    let (_, choice) = best.expect("at least one injection exists");

    let mut row_to_col = vec![None; rows];
    for (s, &l) in choice.iter().enumerate() {
        if transposed {
            row_to_col[l] = Some(s);
        } else {
            row_to_col[s] = Some(l);
        }
    }
    Ok(Assignment::from_row_map(cost, &row_to_col))
}

fn enumerate(
    cost: ArrayView2<'_, f64>,
    current: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut Option<(f64, Vec<usize>)>,
) {
    let depth = current.len();
    if depth == cost.nrows() {
        let total: f64 = current.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            *best = Some((total, current.clone()));
        }
        return;
    }
    for c in 0..used.len() {
        if used[c] {
            continue;
        }
        used[c] = true;
        current.push(c);
        enumerate(cost, current, used, best);
        current.pop();
        used[c] = false;
    }
}
