//! Maximum-weight bipartite assignment between predicted and ground-truth
//! identities.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::types::IdSequence;

/// Largest side the exhaustive solver accepts.
pub const BRUTE_FORCE_MAX_SIDE: usize = 8;

/// Predicted (left) and ground-truth (right) identities with overlap weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchingProblem {
    pub left: Vec<IdSequence>,
    pub right: Vec<IdSequence>,
    /// `weights[i][j] == |left[i] ∩ right[j]|`.
    pub weights: Vec<Vec<u64>>,
}

impl MatchingProblem {
    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(self.right.len(), Vec::len)
    }

    /// A bare weight matrix with placeholder identities; used by the solvers'
    /// tests and benches.
    pub fn from_weights(weights: Vec<Vec<u64>>) -> Self {
        let cols = weights.first().map_or(0, Vec::len);
        assert!(weights.iter().all(|r| r.len() == cols), "ragged weight matrix");
        let placeholder = |p: &str, i: usize| IdSequence::new(format!("{p}{i}"), vec![1]).unwrap();
        Self {
            left: (0..weights.len()).map(|i| placeholder("u", i)).collect(),
            right: (0..cols).map(|j| placeholder("v", j)).collect(),
            weights,
        }
    }
}

pub fn build_matching_problem(pred: &[IdSequence], gt: &[IdSequence]) -> MatchingProblem {
    let weights = pred
        .iter()
        .map(|p| gt.iter().map(|g| p.overlap(g) as u64).collect())
        .collect();
    MatchingProblem {
        left: pred.to_vec(),
        right: gt.to_vec(),
        weights,
    }
}

/// An injective partial map left → right.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(left, right)` index pairs sorted by left index; zero-weight pairs omitted.
    pub pairs: Vec<(usize, usize)>,
    pub total: u64,
}

impl Assignment {
    fn from_pairs(problem: &MatchingProblem, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.retain(|&(i, j)| problem.weights[i][j] > 0);
        pairs.sort_unstable();
        let total = pairs.iter().map(|&(i, j)| problem.weights[i][j]).sum();
        Self { pairs, total }
    }
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on the
/// zero-padded square matrix. `O(n^3)` for `n = max(rows, cols)`.
pub fn solve_assignment(problem: &MatchingProblem) -> Assignment {
    let (rows, cols) = (problem.rows(), problem.cols());
    let n = rows.max(cols);
    if n == 0 || rows == 0 || cols == 0 {
        return Assignment::default();
    }
    let max_w = problem
        .weights
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        let w = if i < rows && j < cols {
            problem.weights[i][j] as i64
        } else {
            0
        };
        max_w - w
    };

    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
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
    let pairs = (1..=n)
        .filter(|&j| owner[j] != 0 && owner[j] <= rows && j <= cols)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    Assignment::from_pairs(problem, pairs)
}

/// Exact optimum by enumerating every injective partial map. Refuses
/// problems whose larger side exceeds [`BRUTE_FORCE_MAX_SIDE`].
pub fn solve_assignment_bruteforce(problem: &MatchingProblem) -> Result<Assignment, MetricsError> {
    let side = problem.rows().max(problem.cols());
    if side > BRUTE_FORCE_MAX_SIDE {
        return Err(MetricsError::TooLarge {
            side,
            max: BRUTE_FORCE_MAX_SIDE,
        });
    }
    let mut taken = vec![false; problem.cols()];
    let mut current = Vec::new();
    let mut best = (0u64, Vec::new());
    enumerate(problem, 0, 0, &mut taken, &mut current, &mut best);
    Ok(Assignment::from_pairs(problem, best.1))
}

fn enumerate(
    p: &MatchingProblem,
    row: usize,
    acc: u64,
    taken: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    best: &mut (u64, Vec<(usize, usize)>),
) {
    if row == p.rows() {
        if acc > best.0 || best.1.is_empty() && acc == best.0 {
            *best = (acc, current.clone());
        }
        return;
    }
    // leave this row unmatched
    enumerate(p, row + 1, acc, taken, current, best);
    for j in 0..p.cols() {
        if taken[j] {
            continue;
        }
        taken[j] = true;
        current.push((row, j));
        enumerate(p, row + 1, acc + p.weights[row][j], taken, current, best);
        current.pop();
        taken[j] = false;
    }
}
