//! Minimum-cost perfect matching on a square cost matrix (Hungarian method
//! with row/column potentials, O(k³)).

use crate::error::{contract, Result};

/// Returns `(cost, assign)` where row `i` is matched to column `assign[i]`.
/// `cost` is row-major `k × k`.
pub fn min_cost_assignment(cost: &[f64], k: usize) -> Result<(f64, Vec<usize>)> {
    if cost.len() != k * k {
        return Err(contract(format!("cost matrix has {} entries, expected {}", cost.len(), k * k)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(contract("cost matrix must be finite"));
    }
    if k == 0 {
        return Ok((0.0, Vec::new()));
    }
    let c = |i: usize, j: usize| cost[(i - 1) * k + (j - 1)];
    // 1-based with column 0 as the virtual start
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
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
    let mut assign = vec![0; k];
    for j in 1..=k {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i * k + j]).sum();
    Ok((total, assign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[f64], k: usize) -> f64 {
        fn rec(cost: &[f64], k: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == k {
                *best = best.min(acc);
                return;
            }
            for j in 0..k {
                if !used[j] {
                    used[j] = true;
                    rec(cost, k, row + 1, used, acc + cost[row * k + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, k, 0, &mut vec![false; k], 0.0, &mut best);
        best
    }

    #[test]
    fn small_cases() {
        assert_eq!(min_cost_assignment(&[], 0).unwrap().0, 0.0);
        assert_eq!(min_cost_assignment(&[3.0], 1).unwrap(), (3.0, vec![0]));
        let (c, a) = min_cost_assignment(&[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0], 3).unwrap();
        assert_eq!(c, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
        assert!(min_cost_assignment(&[1.0, 2.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive(k in 1usize..=7, seed in proptest::collection::vec(0u32..1000, 49)) {
            let cost: Vec<f64> = seed[..k * k].iter().map(|&v| v as f64 / 10.0).collect();
            let (c, a) = min_cost_assignment(&cost, k).unwrap();
            let mut seen = a.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
            prop_assert!((c - brute_force(&cost, k)).abs() < 1e-9);
        }
    }
}
