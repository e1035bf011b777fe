use crate::{Error, Result, Scalar};

/// Optimal one-to-one assignment of a rectangular cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<S = f64> {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of the original costs of `pairs`, accumulated in row order.
    pub total: S,
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
///
/// The matrix is padded to a square with a constant sentinel above every real
/// cost; pairs landing on padding are reported as unmatched.
pub fn hungarian<S: Scalar>(cost: &[Vec<S>]) -> Result<Assignment<S>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("cost matrix rows differ in length".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hungarian cost"));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            total: S::zero(),
        });
    }

    let n = rows.max(cols);
    let peak = cost.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs()));
    let sentinel = peak + S::one();
    let a = |i: usize, j: usize| -> S {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            sentinel
        }
    };

    // Shortest augmenting paths with dual potentials; indices are 1-based,
    // column 0 is a virtual source.
    let inf = S::infinity();
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let mut pairs = Vec::new();
    let mut matched_cols = vec![false; cols];
    let mut unmatched_rows = Vec::new();
    let mut total = S::zero();
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            matched_cols[j] = true;
            total += cost[i][j];
        } else {
            unmatched_rows.push(i);
        }
    }
    let unmatched_cols = (0..cols).filter(|j| !matched_cols[*j]).collect();
    Ok(Assignment {
        pairs,
        unmatched_rows,
        unmatched_cols,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over injective maps from the smaller side.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn rec(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, transpose: bool) {
            let n_outer = if transpose { cost[0].len() } else { cost.len() };
            if i == n_outer {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    let c = if transpose { cost[j][i] } else { cost[i][j] };
                    rec(cost, i + 1, used, acc + c, best, transpose);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        if rows <= cols {
            rec(cost, 0, &mut vec![false; cols], 0.0, &mut best, false);
        } else {
            rec(cost, 0, &mut vec![false; rows], 0.0, &mut best, true);
        }
        best
    }

    #[test]
    fn two_by_two_examples() {
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total, 2.0);
        let b = hungarian(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(b.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(b.total, 3.0);
    }

    #[test]
    fn diagonal_zero_gives_identity() {
        let n = 6;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 10.0 + (i + j) as f64 }).collect())
            .collect();
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn rectangular_reports_unmatched() {
        let a = hungarian(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched_cols, vec![0, 2]);
        let b = hungarian(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(b.pairs, vec![(1, 0)]);
        assert_eq!(b.unmatched_rows, vec![0, 2]);
        let e = hungarian::<f64>(&[]).unwrap();
        assert!(e.pairs.is_empty());
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(hungarian(&[vec![1.0, f64::NAN]]).is_err());
        assert!(hungarian(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let rows = rng.random_range(1..=7);
            let cols = rng.random_range(1..=7);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-5.0..20.0)).collect())
                .collect();
            let a = hungarian(&cost).unwrap();
            assert_eq!(a.pairs.len(), rows.min(cols));
            let best = brute_force(&cost);
            assert!(
                (a.total - best).abs() <= 1e-12 * (1.0 + best.abs()),
                "trial {trial}: {} vs {best}",
                a.total
            );
        }
    }

    #[test]
    fn integer_costs_match_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let rows = rng.random_range(1..=7);
            let cols = rng.random_range(1..=7);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(0..50) as f64).collect())
                .collect();
            assert_eq!(hungarian(&cost).unwrap().total, brute_force(&cost));
        }
    }

    #[test]
    fn works_in_f32() {
        let a = hungarian(&[vec![4.0f32, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(a.total, 3.0f32);
    }
}
