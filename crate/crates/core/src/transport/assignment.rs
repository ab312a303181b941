//! Dense linear assignment by shortest augmenting paths with row and column
//! potentials (the O(n³) Hungarian scheme).

use super::DualPotentials;
use crate::error::{invalid_input, Result};

/// Optimal permutation with its Kantorovich certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[i]` is the column matched to row `i`.
    pub permutation: Vec<usize>,
    pub value: f64,
    /// `phi` on rows, `psi` on columns, with `phi_i + psi_j <= c_ij` and
    /// equality on matched pairs.
    pub duals: DualPotentials,
}

/// Minimum-cost perfect matching of a square matrix of finite costs.
pub fn solve_assignment(costs: &[Vec<f64>]) -> Result<Assignment> {
    let n = costs.len();
    if n == 0 {
        return Err(invalid_input("cost matrix is empty"));
    }
    for (i, row) in costs.iter().enumerate() {
        if row.len() != n {
            return Err(invalid_input(format!(
                "cost matrix is not square: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().find(|c| !c.is_finite()) {
            return Err(invalid_input(format!("non-finite cost {c} in row {i}")));
        }
    }

    // 1-based internal indexing; index 0 is the virtual column of the current row.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let row = &costs[i0 - 1];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
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
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[matched_row[j] - 1] = j - 1;
    }
    let value = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| costs[i][j])
        .sum();
    Ok(Assignment {
        permutation,
        value,
        duals: DualPotentials {
            phi: u[1..].to_vec(),
            psi: v[1..].to_vec(),
        },
    })
}
