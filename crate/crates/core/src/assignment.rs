//! Minimum-cost perfect matching by shortest augmenting paths with potentials.

use crate::error::{OtError, Result};
use crate::numcore::Tensor;

/// Largest problem size accepted by the exact solvers.
pub const MAX_ASSIGNMENT: usize = 4096;

/// Optimal matching `row i → col perm[i]` with feasible dual potentials:
/// `u_i + v_j ≤ C_ij` everywhere, with equality on matched pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Assignment {
    /// `(1/n) Σ_i C[i][perm[i]]`, summed in ascending `i`.
    pub fn mean_cost(&self, cost: &Tensor) -> f64 {
        let n = self.perm.len();
        let mut total = 0.0;
        for (i, &j) in self.perm.iter().enumerate() {
            total += cost.data()[i * n + j];
        }
        total / n as f64
    }
}

/// Solves the square assignment problem for `cost` of shape `[n, n]`.
pub fn solve(cost: &Tensor) -> Result<Assignment> {
    if cost.shape().len() != 2 || cost.rows() != cost.cols() {
        return Err(OtError::Shape(format!(
            "assignment needs a square cost matrix, got {:?}",
            cost.shape()
        )));
    }
    let n = cost.rows();
    if n > MAX_ASSIGNMENT {
        return Err(OtError::TooManySamples(n, MAX_ASSIGNMENT));
    }
    if !cost.all_finite() {
        return Err(OtError::NonFinite("assignment cost matrix".into()));
    }
    let c = |i: usize, j: usize| cost.data()[i * n + j];

    // 1-based arrays; column 0 is the virtual source of each augmentation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = c(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let u: Vec<f64> = u[1..].to_vec();
    let mut v: Vec<f64> = v[1..].to_vec();
    // Floating-point drift can leave tiny infeasibilities; tighten v so
    // that every constraint holds and matched pairs stay tight.
    for j in 0..n {
        let slack = (0..n).map(|i| c(i, j) - u[i]).fold(f64::INFINITY, f64::min);
        v[j] = v[j].min(slack);
    }
    Ok(Assignment { perm, u, v })
}

/// Visits every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn brute(cost: &Tensor) -> f64 {
        let n = cost.rows();
        let mut best = f64::INFINITY;
        for_each_permutation(n, |p| {
            let mut total = 0.0;
            for (i, &j) in p.iter().enumerate() {
                total += cost.data()[i * n + j];
            }
            best = best.min(total / n as f64);
        });
        best
    }

    #[test]
    fn permutation_count() {
        let mut count = 0;
        for_each_permutation(5, |_| count += 1);
        assert_eq!(count, 120);
    }

    #[test]
    fn matches_brute_force_and_duals_are_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=7 {
            for _ in 0..10 {
                let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..5.0)).collect();
                let cost = Tensor::matrix(n, n, data);
                let a = solve(&cost).unwrap();
                assert_eq!(a.mean_cost(&cost), brute(&cost));
                for i in 0..n {
                    for j in 0..n {
                        assert!(a.u[i] + a.v[j] <= cost.data()[i * n + j] + 1e-12);
                    }
                    let j = a.perm[i];
                    assert!((a.u[i] + a.v[j] - cost.data()[i * n + j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_zero_gives_identity() {
        let cost = Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]);
        let a = solve(&cost).unwrap();
        assert_eq!(a.perm, vec![0, 1, 2]);
        assert_eq!(a.mean_cost(&cost), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve(&Tensor::zeros(&[2, 3])).is_err());
        assert!(solve(&Tensor::matrix(1, 1, vec![f64::NAN])).is_err());
    }
}
