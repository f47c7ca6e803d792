//! Exact minimum-cost perfect matching (Hungarian method with row-by-row
//! augmentation and dual potentials, O(n³)).

use serde::{Deserialize, Serialize};

use super::CostMatrix;

/// `permutation[k] = l` pairs row `k` (node `k` of A) with column `l`
/// (node `l` of B).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentSolution {
    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(k, &l)| k == l)
    }
}

/// Sum of `cost[k][perm[k]]` in row order.
pub fn assignment_cost(cost: &CostMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(k, &l)| cost.get(k, l)).sum()
}

/// Cost values the solver can run on: an ordered group with an infinity.
trait Cost: Copy + PartialOrd {
    const ZERO: Self;
    const INFINITY: Self;
    fn add(self, other: Self) -> Self;
    fn sub(self, other: Self) -> Self;
}

impl Cost for f64 {
    const ZERO: Self = 0.0;
    const INFINITY: Self = f64::INFINITY;
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn sub(self, other: Self) -> Self {
        self - other
    }
}

/// Primary cost with a tie-breaking secondary cost, ordered lexicographically.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Lex(f64, f64);

impl Cost for Lex {
    const ZERO: Self = Lex(0.0, 0.0);
    const INFINITY: Self = Lex(f64::INFINITY, f64::INFINITY);
    fn add(self, other: Self) -> Self {
        Lex(self.0 + other.0, self.1 + other.1)
    }
    fn sub(self, other: Self) -> Self {
        Lex(self.0 - other.0, self.1 - other.1)
    }
}

fn hungarian<T: Cost>(n: usize, cost: impl Fn(usize, usize) -> T) -> Vec<usize> {
    // 1-based potentials; column 0 is the virtual root of each search.
    let mut u = vec![T::ZERO; n + 1];
    let mut v = vec![T::ZERO; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![T::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        minv.fill(T::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = T::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1).sub(u[i0]).sub(v[j]);
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] = u[row_of_col[j]].add(delta);
                    v[j] = v[j].sub(delta);
                } else {
                    minv[j] = minv[j].sub(delta);
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[row_of_col[j] - 1] = j - 1;
    }
    permutation
}

pub fn solve_assignment(cost: &CostMatrix) -> AssignmentSolution {
    let n = cost.size();
    let c = cost.as_slice();
    let permutation = hungarian(n, |i, j| c[i * n + j]);
    AssignmentSolution {
        total_cost: assignment_cost(cost, &permutation),
        permutation,
    }
}

/// Minimizes `cost`; among equally cheap assignments, minimizes `tie_break`.
/// `total_cost` reports `cost` only.
pub fn solve_assignment_with_ties(cost: &CostMatrix, tie_break: &CostMatrix) -> AssignmentSolution {
    assert_eq!(cost.size(), tie_break.size(), "cost matrices differ in size");
    let n = cost.size();
    let (c, t) = (cost.as_slice(), tie_break.as_slice());
    let permutation = hungarian(n, |i, j| Lex(c[i * n + j], t[i * n + j]));
    AssignmentSolution {
        total_cost: assignment_cost(cost, &permutation),
        permutation,
    }
}
