//! Optimal assignment (Kuhn-Munkres with row/column potentials).

use crate::error::{Error, Result};
use crate::num::Weight;

/// Maximum-weight matching of size `min(rows, cols)`.
///
/// Among all optimal matchings the one whose row-sorted `(row, col)` list is
/// lexicographically smallest is returned. Float inputs compare objective
/// values with a small relative tolerance when resolving ties; exact types
/// compare exactly.
pub fn hungarian_max<T: Weight>(matrix: &[Vec<T>]) -> Result<Vec<(usize, usize)>> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    let mut scale = T::zero();
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::RaggedMatrix);
        }
        for (j, x) in row.iter().enumerate() {
            if !x.is_finite_weight() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
            if x.abs() > scale {
                scale = x.abs();
            }
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }

    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let best = max_matching_value(matrix, &all_rows, &all_cols);
    let tol = T::tie_tolerance(scale, rows.max(cols));
    let target = rows.min(cols);

    let mut free_cols = all_cols;
    let mut chosen = Vec::with_capacity(target);
    let mut fixed = T::zero();
    for i in 0..rows {
        if chosen.len() == target {
            break;
        }
        let later_rows: Vec<usize> = (i + 1..rows).collect();
        let mut picked = None;
        for (slot, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let need = target - chosen.len() - 1;
            if later_rows.len().min(rest_cols.len()) != need {
                continue;
            }
            let value = fixed + matrix[i][j] + max_matching_value(matrix, &later_rows, &rest_cols);
            if value >= best - tol {
                picked = Some(slot);
                break;
            }
        }
        if let Some(slot) = picked {
            let j = free_cols.remove(slot);
            fixed = fixed + matrix[i][j];
            chosen.push((i, j));
        }
    }
    debug_assert_eq!(chosen.len(), target);
    Ok(chosen)
}

/// Sum of the selected entries.
pub fn assignment_value<T: Weight>(matrix: &[Vec<T>], pairs: &[(usize, usize)]) -> T {
    pairs
        .iter()
        .fold(T::zero(), |acc, &(i, j)| acc + matrix[i][j])
}

/// Best total of a full-size matching on the given sub-matrix.
fn max_matching_value<T: Weight>(matrix: &[Vec<T>], rows: &[usize], cols: &[usize]) -> T {
    if rows.is_empty() || cols.is_empty() {
        return T::zero();
    }
    let n = rows.len().max(cols.len());
    // negate for min-cost; pad to square with zeros
    let cost: Vec<Vec<T>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| match (rows.get(a), cols.get(b)) {
                    (Some(&i), Some(&j)) => -matrix[i][j],
                    _ => T::zero(),
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_square(&cost);
    assignment
        .iter()
        .enumerate()
        .filter_map(|(a, &b)| match (rows.get(a), cols.get(b)) {
            (Some(&i), Some(&j)) => Some(matrix[i][j]),
            _ => None,
        })
        .fold(T::zero(), |acc, x| acc + x)
}

/// Minimum-cost perfect matching on a square matrix, O(n³).
/// Returns `assignment[row] = col`.
pub(crate) fn min_cost_square<T: Weight>(cost: &[Vec<T>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based; index 0 is the virtual root column
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv: Vec<Option<T>> = vec![None; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta: Option<T> = None;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if minv[j].is_none_or(|m| cur < m) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                let mj = minv[j].expect("set above");
                if delta.is_none_or(|d| mj < d) {
                    delta = Some(mj);
                    j1 = j;
                }
            }
            let delta = delta.expect("an unused column remains");
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] = u[row_of[j]] + delta;
                    v[j] = v[j] - delta;
                } else if let Some(m) = minv[j] {
                    minv[j] = Some(m - delta);
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}
