//! Minimum-cost rectangular assignment (rows ≤ cols) with row/column potentials.

use std::ops::{Add, Sub};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Entry type of a cost matrix.
pub trait AssignCost: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    const ZERO: Self;
    /// Larger than any reachable reduced cost.
    const INF: Self;
    fn is_finite_cost(self) -> bool;
}

impl AssignCost for i64 {
    const ZERO: Self = 0;
    const INF: Self = i64::MAX / 4;
    fn is_finite_cost(self) -> bool {
        true
    }
}

impl AssignCost for f64 {
    const ZERO: Self = 0.0;
    const INF: Self = f64::INFINITY;
    fn is_finite_cost(self) -> bool {
        self.is_finite()
    }
}

impl AssignCost for f32 {
    const ZERO: Self = 0.0;
    const INF: Self = f32::INFINITY;
    fn is_finite_cost(self) -> bool {
        self.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<C> {
    /// Column assigned to each row; all distinct.
    pub row_to_col: Vec<usize>,
    /// Sum of the chosen entries in row order.
    pub total: C,
}

/// Exact minimum-cost assignment of every row to a distinct column. `O(n²m)`.
pub fn hungarian_solve<C: AssignCost>(cost: &Tensor2D<C>) -> Result<Assignment<C>> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::ShapeMismatch(format!("assignment needs rows <= cols, got {n}x{m}")));
    }
    for r in 0..n {
        if let Some(c) = cost.row(r).iter().position(|v| !v.is_finite_cost()) {
            return Err(Error::NonFiniteCost { row: r, col: c });
        }
    }
    let a = |i: usize, j: usize| cost.get(i - 1, j - 1);
    let mut u = vec![C::ZERO; n + 1];
    let mut v = vec![C::ZERO; m + 1];
    // p[j]: row (1-based) matched to column j; way[j]: previous column on the augmenting path.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![C::INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = C::INF;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
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
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
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
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let mut total = C::ZERO;
    for (r, &c) in row_to_col.iter().enumerate() {
        total = total + cost.get(r, c);
    }
    Ok(Assignment { row_to_col, total })
}
