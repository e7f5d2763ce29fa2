//! Evaluation quantities: map and potential errors, flatness, the exact
//! empirical `W₁` distance used as the `d_KR` estimate, and the stability
//! bound checker.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::assignment::{self, MAX_ASSIGNMENT};
use crate::benchmarks::{target_potential_pairs, BenchmarkProblem};
use crate::error::{OtError, Result};
use crate::models::{MlpModel, Potential};
use crate::numcore::Tensor;
use crate::objectives::CostFn;

/// One evaluation of a (map, potential) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "F")]
    pub f_value: f64,
    pub map_l2: f64,
    pub map_cos: f64,
    pub pot_mse: f64,
    pub pot_grad_mse: f64,
    pub flatness: f64,
    pub dkr: f64,
    pub n_eval: usize,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(OtError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(OtError::Shape(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `mean_i ‖a_i − b_i‖²`.
fn mean_sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    total / a.rows() as f64
}

/// `mean ‖t(x) − T*(x)‖²` from the two mapped batches.
pub fn map_l2_error(tx: &Tensor, tstar_x: &Tensor) -> Result<f64> {
    same_shape(tx, tstar_x, "map error")?;
    Ok(mean_sq_dist(tx, tstar_x))
}

/// Mean row cosine similarity and the number of rows skipped because one of
/// the two vectors was zero.
pub fn map_cosine(tx: &Tensor, tstar_x: &Tensor) -> Result<(f64, usize)> {
    same_shape(tx, tstar_x, "map cosine")?;
    let (mut total, mut used) = (0.0, 0usize);
    for (a, b) in tx.iter_rows().zip(tstar_x.iter_rows()) {
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
        total += (dot / (na * nb)).clamp(-1.0, 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(OtError::Undefined("map cosine: every row is zero".into()));
    }
    Ok((total / used as f64, tx.rows() - used))
}

/// `mean ((ψ − mean ψ) − (ψ* − mean ψ*))²`.
pub fn centered_potential_mse(psi: &[f64], psi_star: &[f64]) -> Result<f64> {
    if psi.len() != psi_star.len() || psi.is_empty() {
        return Err(OtError::Shape(format!(
            "potential values: {} vs {}",
            psi.len(),
            psi_star.len()
        )));
    }
    let n = psi.len() as f64;
    let (ma, mb) = (psi.iter().sum::<f64>() / n, psi_star.iter().sum::<f64>() / n);
    Ok(psi
        .iter()
        .zip(psi_star)
        .map(|(a, b)| ((a - ma) - (b - mb)).powi(2))
        .sum::<f64>()
        / n)
}

/// `mean ‖∇ψ(y) − ∇ψ*(y)‖²`.
pub fn potential_grad_mse(grad: &Tensor, grad_star: &Tensor) -> Result<f64> {
    same_shape(grad, grad_star, "potential gradients")?;
    Ok(mean_sq_dist(grad, grad_star))
}

/// Empirical semi-dual value `mean c(x,t(x)) − mean ψ(t(x)) + mean ψ(y)`.
pub fn semi_dual_estimate(
    x: &Tensor,
    tx: &Tensor,
    psi_tx: &[f64],
    psi_y: &[f64],
    cost: &CostFn,
) -> Result<f64> {
    same_shape(x, tx, "semi-dual estimate")?;
    let n = x.rows() as f64;
    let transport = x.iter_rows().zip(tx.iter_rows()).map(|(a, b)| cost.eval(a, b)).sum::<f64>() / n;
    let pushed = psi_tx.iter().sum::<f64>() / psi_tx.len() as f64;
    let target = psi_y.iter().sum::<f64>() / psi_y.len() as f64;
    Ok(transport + (target - pushed))
}

/// `|F − C*|`.
pub fn flatness(f_value: f64, optimal_cost: f64) -> f64 {
    (f_value - optimal_cost).abs()
}

/// Exact `W₁` between the uniform empirical measures on the rows of `a` and
/// `b`: a minimum Euclidean matching divided by `n`. A smaller set is padded by
/// cycling through its own rows.
pub fn empirical_dkr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0 {
        return Err(OtError::Shape(format!(
            "d_KR samples: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.rows().max(b.rows());
    if n > MAX_ASSIGNMENT {
        return Err(OtError::TooManySamples(n, MAX_ASSIGNMENT));
    }
    let pad = |t: &Tensor| {
        if t.rows() == n {
            t.clone()
        } else {
            t.select_rows(&(0..n).map(|i| i % t.rows()).collect::<Vec<_>>())
        }
    };
    let (a, b) = (pad(a), pad(b));
    let euclid = CostFn {
        p: 1.0,
        scaling: crate::objectives::CostScaling::Unit,
    };
    let cost = euclid.matrix(&a, &b);
    Ok(assignment::solve(&cost)?.mean_cost(&cost))
}

/// Smallest constant `C` with `map_l2 ≤ C (flatness + d_KR)` on every row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    pub max_ratio: f64,
    pub worst_row: usize,
    pub finite: bool,
}

pub const RATIO_EPS: f64 = 1e-12;

pub fn stability_bound_check<'a>(rows: impl IntoIterator<Item = &'a MetricReport>) -> Result<StabilityBound> {
    let mut best: Option<StabilityBound> = None;
    let mut finite = true;
    for (i, r) in rows.into_iter().enumerate() {
        let ratio = r.map_l2 / (r.flatness + r.dkr + RATIO_EPS);
        finite &= ratio.is_finite();
        if best.map_or(true, |b| ratio > b.max_ratio || !ratio.is_finite()) {
            best = Some(StabilityBound {
                max_ratio: ratio,
                worst_row: i,
                finite,
            });
        }
    }
    let mut report = best.ok_or_else(|| OtError::Undefined("bound check on an empty history".into()))?;
    report.finite = finite;
    Ok(report)
}

/// Fixed evaluation data: source points, their images under `T*` (which double
/// as a plan-coupled target batch) and the exact target potential there, all
/// expressed in the convention of `cost`.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub x: Tensor,
    pub y: Tensor,
    pub psi_star: Vec<f64>,
    pub grad_psi_star: Tensor,
    pub optimal_cost: f64,
}

impl EvalSet {
    pub fn from_problem(problem: &BenchmarkProblem, n: usize, cost: &CostFn, rng: &mut dyn RngCore) -> Result<Self> {
        let gt = problem
            .ground_truth()
            .ok_or(OtError::MissingGroundTruth("evaluation"))?;
        let r = cost.relative_to_half_squared()?;
        let pairs = target_potential_pairs(problem, n, rng)?;
        Ok(Self {
            psi_star: pairs.psi.iter().map(|v| r * v).collect(),
            grad_psi_star: pairs.grad_psi.map(|v| r * v),
            optimal_cost: gt.optimal_cost(cost)?,
            x: pairs.x,
            y: pairs.y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// All metrics for a map and a semi-dual potential on `set`. `d_KR` is the
/// exact `W₁` between `t(x)` and `T*(x)` on the first `dkr_n` rows (skipped,
/// reported as NaN, when `dkr_n == 0`).
pub fn evaluate(map: &MlpModel, psi: &Potential, set: &EvalSet, cost: &CostFn, dkr_n: usize) -> Result<MetricReport> {
    let tx = map.apply(&set.x)?;
    let psi_tx = psi.apply(&tx)?.into_data();
    let (psi_y, grad_y) = psi.value_and_grad(&set.y)?;
    let psi_y = psi_y.into_data();
    let f_value = semi_dual_estimate(&set.x, &tx, &psi_tx, &psi_y, cost)?;
    let dkr = if dkr_n == 0 {
        f64::NAN
    } else {
        let idx: Vec<usize> = (0..dkr_n.min(set.len())).collect();
        empirical_dkr(&tx.select_rows(&idx), &set.y.select_rows(&idx))?
    };
    let map_cos = map_cosine(&tx, &set.y).map(|c| c.0).unwrap_or(f64::NAN);
    Ok(MetricReport {
        f_value,
        map_l2: map_l2_error(&tx, &set.y)?,
        map_cos,
        pot_mse: centered_potential_mse(&psi_y, &set.psi_star)?,
        pot_grad_mse: potential_grad_mse(&grad_y, &set.grad_psi_star)?,
        flatness: flatness(f_value, set.optimal_cost),
        dkr,
        n_eval: set.len(),
    })
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(OtError::Shape("spearman needs two equal series of length ≥ 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(OtError::Undefined("spearman of a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::assignment::for_each_permutation;
    use crate::benchmarks::{BenchmarkSpec, GaussianSpec};
    use crate::models::Activation;
    use crate::rng::rng_for;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect())
    }

    #[test]
    fn map_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = random(&mut rng, 20, 3);
        assert_eq!(map_l2_error(&t, &t).unwrap(), 0.0);
        let shifted = t.map(|v| v);
        let mut shifted = shifted;
        shifted.data_mut().chunks_mut(3).for_each(|r| {
            r[0] += 1.0;
            r[2] -= 2.0;
        });
        assert!((map_l2_error(&shifted, &t).unwrap() - 5.0).abs() < 1e-12);

        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let x = p.sample_source(100, &mut rng_for(0, 0));
        let hand = x.map(|v| 2.0 + 1.5 * v);
        assert_eq!(map_l2_error(&hand, &p.ground_truth().unwrap().map(&x).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn cosine_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random(&mut rng, 30, 2);
        assert!((map_cosine(&t, &t).unwrap().0 - 1.0).abs() < 1e-12);
        assert!((map_cosine(&t.map(|v| -v), &t).unwrap().0 + 1.0).abs() < 1e-12);
        assert!((map_cosine(&t.map(|v| 2.0 * v), &t).unwrap().0 - 1.0).abs() < 1e-12);
        let mut z = t.clone();
        z.data_mut()[..2].fill(0.0);
        assert_eq!(map_cosine(&z, &t).unwrap().1, 1);
        assert!(map_cosine(&Tensor::zeros(&[3, 2]), &t.select_rows(&[0, 1, 2])).is_err());
    }

    #[test]
    fn potential_errors() {
        let star = vec![1.0, -2.0, 0.5, 3.0];
        let plus: Vec<f64> = star.iter().map(|v| v + 17.0).collect();
        assert!(centered_potential_mse(&plus, &star).unwrap() < 1e-24);
        assert_eq!(centered_potential_mse(&star, &star).unwrap(), 0.0);
        let double: Vec<f64> = star.iter().map(|v| 2.0 * v).collect();
        let n = star.len() as f64;
        let mean = star.iter().sum::<f64>() / n;
        let var = star.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((centered_potential_mse(&double, &star).unwrap() - var).abs() < 1e-12);

        let g = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]);
        let lin = g.zip_map(&Tensor::from_rows(&[vec![0.5, -1.0], vec![0.5, -1.0]]), |a, b| a + b);
        assert_eq!(potential_grad_mse(&g, &g).unwrap(), 0.0);
        assert_eq!(potential_grad_mse(&lin, &g).unwrap(), 1.25);
    }

    #[test]
    fn flatness_cases() {
        // μ = ν, identity map, zero potential.
        let spec = GaussianSpec::isotropic(2, 0.0, 1.0).unwrap();
        let p = BenchmarkProblem::gaussian(spec.clone(), spec).unwrap();
        let set = EvalSet::from_problem(&p, 64, &CostFn::half_squared(), &mut rng_for(0, 0)).unwrap();
        let zeros = vec![0.0; 64];
        let f = semi_dual_estimate(&set.x, &set.x, &zeros, &zeros, &CostFn::half_squared()).unwrap();
        assert_eq!(flatness(f, set.optimal_cost), 0.0);

        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        assert_eq!(p.ground_truth().unwrap().optimal_cost(&CostFn::half_squared()).unwrap(), 2.125);
    }

    #[test]
    fn plan_coupled_flatness_ignores_the_potential() {
        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let cost = CostFn::half_squared();
        let set = EvalSet::from_problem(&p, 256, &cost, &mut rng_for(1, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut values = Vec::new();
        for _ in 0..20 {
            let psi = Potential::Mlp(MlpModel::init(&[1, 16, 1], Activation::LeakyRelu, 1.0, &mut rng).unwrap());
            let psi_y = psi.apply(&set.y).unwrap().into_data();
            values.push(semi_dual_estimate(&set.x, &set.y, &psi_y, &psi_y, &cost).unwrap());
        }
        let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(spread, 0.0);
    }

    #[test]
    fn dkr_cases() {
        let a = Tensor::matrix(2, 1, vec![0.0, 1.0]);
        let b = Tensor::matrix(2, 1, vec![3.0, 2.0]);
        assert_eq!(empirical_dkr(&a, &b).unwrap(), 2.0);
        assert_eq!(empirical_dkr(&a, &a).unwrap(), 0.0);
        let big = Tensor::zeros(&[4097, 1]);
        assert!(matches!(empirical_dkr(&big, &big), Err(OtError::TooManySamples(..))));
    }

    #[test]
    fn dkr_matches_brute_force_and_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=7 {
            let (a, b) = (random(&mut rng, n, 2), random(&mut rng, n, 2));
            let euclid = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let mut best = f64::INFINITY;
            for_each_permutation(n, |perm| {
                let mut total = 0.0;
                for (i, &j) in perm.iter().enumerate() {
                    total += euclid(a.row(i), b.row(j));
                }
                best = best.min(total / n as f64);
            });
            assert_eq!(empirical_dkr(&a, &b).unwrap(), best);
        }
        for _ in 0..20 {
            let (a, b, c) = (random(&mut rng, 16, 2), random(&mut rng, 16, 2), random(&mut rng, 16, 2));
            let (ab, bc, ac) = (
                empirical_dkr(&a, &b).unwrap(),
                empirical_dkr(&b, &c).unwrap(),
                empirical_dkr(&a, &c).unwrap(),
            );
            assert!((ab - empirical_dkr(&b, &a).unwrap()).abs() < 1e-12);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn bound_ratio() {
        let row = |map_l2, flatness, dkr| MetricReport {
            f_value: 0.0,
            map_l2,
            map_cos: 1.0,
            pot_mse: 0.0,
            pot_grad_mse: 0.0,
            flatness,
            dkr,
            n_eval: 1,
        };
        let r = stability_bound_check(&[row(1.0, 0.5, 0.5)]).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-11);
        let r = stability_bound_check(&[row(0.0, 0.0, 0.0), row(0.2, 0.1, 0.0)]).unwrap();
        assert_eq!(r.worst_row, 1);
        assert!(stability_bound_check(&[]).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
