//! Optimal linear assignment (Hungarian algorithm with potentials).
//!
//! The tracker needs the detection-to-track matching that maximizes total
//! IoU while forbidding pairs below a gate. Greedy matching is close but
//! can flip ids when boxes cross; the exact solver costs O(n^3) on a few
//! dozen boxes, which is nothing.

const INF: f64 = f64::INFINITY;

/// Minimum-cost perfect assignment on an `n x m` matrix with `n <= m`.
/// Returns `row -> col`.
fn min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1]; // p[j] = row matched to col j (1-based)
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Pairs `(row, col)` maximizing the total score over pairs with
/// `score >= gate`; every row and column is used at most once.
pub fn max_score_assignment(score: &[Vec<f64>], gate: f64) -> Vec<(usize, usize)> {
    let n = score.len();
    let m = if n == 0 { 0 } else { score[0].len() };
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let k = n.max(m);
    // pad to square; sub-gate and padding cells cost 0, eligible pairs -score
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i < n && j < m && score[i][j] >= gate {
                        -score[i][j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let row_to_col = min_cost(&cost);
    let mut pairs: Vec<(usize, usize)> = row_to_col
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < n && j < m && score[i][j] >= gate)
        .map(|(i, &j)| (i, j))
        .collect();
    pairs.sort_unstable();
    pairs
}
