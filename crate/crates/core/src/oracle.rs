//! Exact transport between uniform empirical measures of equal size, and
//! checkable witnesses of the structure of the semi-dual saddle functional.
//!
//! With `n` points on each side and weights `1/n` the Kantorovich problem is an
//! assignment problem, so every quantity here is computed exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::assignment::{self, for_each_permutation, MAX_ASSIGNMENT};
use crate::error::{OtError, Result};
use crate::numcore::Tensor;
use crate::objectives::{CostFn, CostScaling};
use crate::rng::{derive_seed, rng_for};

/// Absolute tolerance of every oracle comparison.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteInstance {
    pub x: Tensor,
    pub y: Tensor,
    pub cost_fn: CostFn,
    /// `C[i][j] = c(x_i, y_j)`.
    pub cost: Tensor,
}

impl DiscreteInstance {
    pub fn new(x: Tensor, y: Tensor, cost_fn: CostFn) -> Result<Self> {
        if x.shape().len() != 2 || x.shape() != y.shape() {
            return Err(OtError::Shape(format!(
                "instance needs equal point sets, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() == 0 || x.rows() > MAX_ASSIGNMENT {
            return Err(OtError::TooManySamples(x.rows(), MAX_ASSIGNMENT));
        }
        let cost = cost_fn.matrix(&x, &y);
        if !cost.all_finite() {
            return Err(OtError::NonFinite("instance cost matrix".into()));
        }
        Ok(Self { x, y, cost_fn, cost })
    }

    /// `n` uniform points in `[−3, 3]^d` on each side.
    pub fn random(n: usize, d: usize, cost_fn: CostFn, rng: &mut dyn RngCore) -> Result<Self> {
        let mut draw = || Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let x = draw();
        let y = draw();
        Self::new(x, y, cost_fn)
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost.data()[i * self.n() + j]
    }

    /// Text export: a `cost` line, then one `x` or `y` row per point.
    pub fn to_csv(&self) -> String {
        let scaling = match self.cost_fn.scaling {
            CostScaling::InverseP => "inverse-p",
            CostScaling::Half => "half",
            CostScaling::Unit => "unit",
        };
        let mut s = format!("cost,{},{scaling}\n", self.cost_fn.p);
        for (side, t) in [("x", &self.x), ("y", &self.y)] {
            for r in t.iter_rows() {
                s.push_str(side);
                for v in r {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<&str> = lines
            .next()
            .ok_or_else(|| OtError::Parse("empty instance file".into()))?
            .split(',')
            .collect();
        if head.len() != 3 || head[0] != "cost" {
            return Err(OtError::Parse("instance must start with `cost,<p>,<scaling>`".into()));
        }
        let p: f64 = head[1].parse().map_err(|_| OtError::Parse(format!("bad exponent {}", head[1])))?;
        let scaling = match head[2] {
            "inverse-p" => CostScaling::InverseP,
            "half" => CostScaling::Half,
            "unit" => CostScaling::Unit,
            other => return Err(OtError::Parse(format!("unknown cost scaling {other}"))),
        };
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        let mut dim = None;
        for line in lines {
            let mut fields = line.split(',');
            let side = fields.next().unwrap_or_default();
            let row: Vec<f64> = fields
                .map(|f| f.trim().parse().map_err(|_| OtError::Parse(format!("bad value `{f}`"))))
                .collect::<Result<_>>()?;
            if *dim.get_or_insert(row.len()) != row.len() {
                return Err(OtError::Parse("ragged instance rows".into()));
            }
            match side {
                "x" => xs.push(row),
                "y" => ys.push(row),
                other => return Err(OtError::Parse(format!("unknown side `{other}`"))),
            }
        }
        if xs.is_empty() {
            return Err(OtError::Parse("instance has no points".into()));
        }
        Self::new(Tensor::from_rows(&xs), Tensor::from_rows(&ys), CostFn { p, scaling })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Potentials on the source (`phi`) and target (`psi`) points.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPair {
    /// Largest violation of `φ_i + ψ_j ≤ C[i][j]` (nonpositive when feasible).
    pub fn max_violation(&self, inst: &DiscreteInstance) -> f64 {
        let n = inst.n();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(self.phi[i] + self.psi[j] - inst.c(i, j));
            }
        }
        worst
    }
}

/// Which side the transformed function lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `ψ^c(x_i) = min_j C[i][j] − ψ_j`, from a potential on the targets.
    Source,
    /// `φ^c(y_j) = min_i C[i][j] − φ_i`, from a potential on the sources.
    Target,
}

pub fn c_transform(f: &[f64], cost: &Tensor, side: Side) -> Vec<f64> {
    let n = cost.rows();
    let c = |i: usize, j: usize| cost.data()[i * n + j];
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| match side {
                    Side::Source => c(a, b) - f[b],
                    Side::Target => c(b, a) - f[b],
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `ψ^{cc}` on the target points.
pub fn double_c_transform(psi: &[f64], cost: &Tensor) -> Vec<f64> {
    c_transform(&c_transform(psi, cost, Side::Source), cost, Side::Target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentSolution {
    pub perm: Vec<usize>,
    pub optimal_cost: f64,
    pub duals: DualPair,
}

pub fn solve_assignment(inst: &DiscreteInstance) -> Result<AssignmentSolution> {
    let a = assignment::solve(&inst.cost)?;
    Ok(AssignmentSolution {
        optimal_cost: a.mean_cost(&inst.cost),
        perm: a.perm,
        duals: DualPair { phi: a.u, psi: a.v },
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/n) Σ_i ψ^c(x_i) + (1/n) Σ_j ψ_j`.
pub fn semidual_value(psi: &[f64], inst: &DiscreteInstance) -> f64 {
    mean(&c_transform(psi, &inst.cost, Side::Source)) + mean(psi)
}

/// Discrete saddle functional for an index map `t`:
/// `F(ψ,t) = (1/n) Σ_i C[i][t(i)] + (1/n) Σ_j ψ_j − (1/n) Σ_i ψ_{t(i)}`,
/// with the two potential sums grouped per target as `Σ_j (1 − m_j) ψ_j`, where
/// `m_j` counts the sources sent to `j`.
pub fn discrete_saddle(psi: &[f64], t: &[usize], inst: &DiscreteInstance) -> Result<f64> {
    let n = inst.n();
    if t.len() != n || psi.len() != n || t.iter().any(|&j| j >= n) {
        return Err(OtError::IndexMap(format!("index map must send {n} sources into 0..{n}")));
    }
    let mut hits = vec![0usize; n];
    let mut transport = 0.0;
    for (i, &j) in t.iter().enumerate() {
        hits[j] += 1;
        transport += inst.c(i, j);
    }
    let mut potential = 0.0;
    for j in 0..n {
        let weight = 1.0 - hits[j] as f64;
        if weight != 0.0 {
            potential += weight * psi[j];
        }
    }
    Ok(transport / n as f64 + potential / n as f64)
}

fn is_bijection(t: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    t.len() == n && t.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}

/// Spread `max − min` of `F(ψ, σ)` over `trials` random potentials with
/// entries in `[−scale, scale]`. Zero for every bijection.
pub fn flatness_witness(
    inst: &DiscreteInstance,
    sigma: &[usize],
    trials: usize,
    scale: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if !is_bijection(sigma, inst.n()) {
        return Err(OtError::IndexMap("flatness witness needs a bijection".into()));
    }
    saddle_spread(inst, sigma, trials, scale, rng)
}

/// Same spread for an arbitrary index map.
pub fn saddle_spread(
    inst: &DiscreteInstance,
    t: &[usize],
    trials: usize,
    scale: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let n = inst.n();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..trials.max(1) {
        let psi: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        let f = discrete_saddle(&psi, t, inst)?;
        lo = lo.min(f);
        hi = hi.max(f);
    }
    Ok(hi - lo)
}

/// Values of `F(M·1_A, t)` for a map `t` that does not preserve the measure,
/// with `A` the targets `t` never reaches.
#[derive(Clone, Debug, PartialEq)]
pub struct UnboundednessWitness {
    pub set: Vec<usize>,
    /// `ν(A) − t♯μ(A) = |A| / n`.
    pub sigma: f64,
    pub baseline: f64,
    pub values: Vec<f64>,
}

impl UnboundednessWitness {
    /// Largest shortfall of `F(ψ_M) ≥ F(ψ_0) + M σ(A)` (nonpositive when it holds).
    pub fn max_shortfall(&self, ms: &[f64]) -> f64 {
        ms.iter()
            .zip(&self.values)
            .map(|(m, v)| self.baseline + m * self.sigma - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn unboundedness_witness(inst: &DiscreteInstance, t: &[usize], ms: &[f64]) -> Result<UnboundednessWitness> {
    let n = inst.n();
    if t.len() != n || t.iter().any(|&j| j >= n) {
        return Err(OtError::IndexMap(format!("index map must send {n} sources into 0..{n}")));
    }
    if is_bijection(t, n) {
        return Err(OtError::IndexMap("map preserves the measure: no witness set exists".into()));
    }
    let mut hit = vec![false; n];
    t.iter().for_each(|&j| hit[j] = true);
    let set: Vec<usize> = (0..n).filter(|&j| !hit[j]).collect();
    let indicator = |m: f64| {
        let mut psi = vec![0.0; n];
        set.iter().for_each(|&j| psi[j] = m);
        psi
    };
    let baseline = discrete_saddle(&indicator(0.0), t, inst)?;
    let values = ms
        .iter()
        .map(|&m| discrete_saddle(&indicator(m), t, inst))
        .collect::<Result<_>>()?;
    Ok(UnboundednessWitness {
        sigma: set.len() as f64 / n as f64,
        set,
        baseline,
        values,
    })
}

/// `(1/n) Σ_j (ψ^{cc}_j − ψ_j)`: nonnegative, zero exactly on c-concave vectors.
pub fn cconcavity_gap(psi: &[f64], inst: &DiscreteInstance) -> f64 {
    let cc = double_c_transform(psi, &inst.cost);
    cc.iter().zip(psi).map(|(a, b)| a - b).sum::<f64>() / psi.len() as f64
}

/// `min_t F(ψ, t)` over all `n^n` index maps.
pub fn min_over_maps(psi: &[f64], inst: &DiscreteInstance) -> Result<f64> {
    let n = inst.n();
    if n > 8 {
        return Err(OtError::TooManySamples(n, 8));
    }
    let mut t = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(discrete_saddle(psi, &t, inst)?);
        let mut k = 0;
        while k < n {
            t[k] += 1;
            if t[k] < n {
                break;
            }
            t[k] = 0;
            k += 1;
        }
        if k == n {
            return Ok(best);
        }
    }
}

/// `min_σ (1/n) Σ_i C[i][σ(i)]` by enumeration, summed in ascending `i`.
pub fn brute_force_assignment(inst: &DiscreteInstance) -> Result<f64> {
    let n = inst.n();
    if n > 9 {
        return Err(OtError::TooManySamples(n, 9));
    }
    let mut best = f64::INFINITY;
    for_each_permutation(n, |p| {
        let mut total = 0.0;
        for (i, &j) in p.iter().enumerate() {
            total += inst.c(i, j);
        }
        best = best.min(total / n as f64);
    });
    Ok(best)
}

/// Outcome of one oracle property over all instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>9} {:>14}  result\n", "check", "instances", "max residual");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<28} {:>9} {:>14.3e}  {}",
                c.name,
                c.instances,
                c.max_residual,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub random_potentials: usize,
    pub seed: u64,
    /// Replaces the assignment duals with a suboptimal pair, which the
    /// duality check must then report.
    pub inject_suboptimal_duals: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            sizes: vec![4, 8, 16, 64],
            dims: vec![1, 2, 8],
            random_potentials: 1000,
            seed: 0,
            inject_suboptimal_duals: false,
        }
    }
}

struct Tracker {
    name: &'static str,
    instances: usize,
    worst: f64,
    ok: bool,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            worst: 0.0,
            ok: true,
        }
    }

    /// Records a residual that must be at most `ORACLE_TOL`.
    fn residual(&mut self, r: f64) {
        self.worst = self.worst.max(r);
        self.ok &= r <= ORACLE_TOL;
    }

    fn done(self) -> Check {
        Check {
            name: self.name.into(),
            instances: self.instances,
            max_residual: self.worst,
            passed: self.ok,
        }
    }
}

/// Runs every oracle property on random quadratic-cost instances.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.sizes.is_empty() || cfg.dims.is_empty() {
        return Err(OtError::Config("oracle suite needs sizes and dims".into()));
    }
    if let Some(&n) = cfg.sizes.iter().find(|&&n| n == 0 || n > MAX_ASSIGNMENT) {
        return Err(OtError::TooManySamples(n, MAX_ASSIGNMENT));
    }
    let cost = CostFn::half_squared();
    let mut duality = Tracker::new("strong duality");
    let mut weak = Tracker::new("weak duality");
    let mut feasible = Tracker::new("dual feasibility");
    let mut slack = Tracker::new("complementary slackness");
    let mut flat = Tracker::new("flatness (bijections)");
    let mut gap = Tracker::new("c-concavity gap");
    let mut unbounded = Tracker::new("unboundedness");
    let mut brute = Tracker::new("brute force (n = 7)");
    let mut inf_form = Tracker::new("inf over maps (n = 5)");

    for k in 0..cfg.instances {
        let n = cfg.sizes[k % cfg.sizes.len()];
        let d = cfg.dims[(k / cfg.sizes.len()) % cfg.dims.len()];
        let mut rng = rng_for(derive_seed(&[cfg.seed, k as u64]), 0);
        let inst = DiscreteInstance::random(n, d, cost, &mut rng)?;
        let mut sol = solve_assignment(&inst)?;
        if cfg.inject_suboptimal_duals {
            sol.duals.psi.iter_mut().for_each(|v| *v -= 1.0);
        }
        let (phi, psi) = (&sol.duals.phi, &sol.duals.psi);

        duality.instances += 1;
        duality.residual((semidual_value(psi, &inst) - sol.optimal_cost).abs());
        feasible.instances += 1;
        feasible.residual(sol.duals.max_violation(&inst).max(0.0));
        slack.instances += 1;
        for (i, &j) in sol.perm.iter().enumerate() {
            slack.residual((phi[i] + psi[j] - inst.c(i, j)).abs());
        }

        weak.instances += 1;
        let spread = psi.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs())) + 1.0;
        for _ in 0..cfg.random_potentials {
            let random: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
            weak.residual((semidual_value(&random, &inst) - sol.optimal_cost).max(0.0));
        }

        flat.instances += 1;
        flat.residual(flatness_witness(&inst, &sol.perm, 100, 10.0, &mut rng)?);

        gap.instances += 1;
        let g0 = cconcavity_gap(psi, &inst);
        gap.residual(g0.abs());
        let mut raised = double_c_transform(psi, &inst.cost);
        raised[0] += 1.0;
        // Raising one entry above its double transform must open a strictly
        // positive gap; report the shortfall from zero otherwise.
        let g1 = cconcavity_gap(&raised, &inst);
        gap.residual(if g1 > 0.0 { 0.0 } else { 1.0 });
        if n >= 2 {
            unbounded.instances += 1;
            let mut t = sol.perm.clone();
            t[1] = t[0];
            let ms = [1.0, 10.0, 100.0];
            let w = unboundedness_witness(&inst, &t, &ms)?;
            unbounded.residual(w.max_shortfall(&ms).max(0.0));
        }
    }

    let mut rng = rng_for(derive_seed(&[cfg.seed, u64::MAX]), 0);
    for _ in 0..5 {
        let inst = DiscreteInstance::random(7, 2, cost, &mut rng)?;
        brute.instances += 1;
        let sol = solve_assignment(&inst)?;
        brute.residual((sol.optimal_cost - brute_force_assignment(&inst)?).abs());

        let small = DiscreteInstance::random(5, 2, cost, &mut rng)?;
        inf_form.instances += 1;
        for _ in 0..5 {
            let psi: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            inf_form.residual((min_over_maps(&psi, &small)? - semidual_value(&psi, &small)).abs());
        }
    }

    Ok(SuiteReport {
        checks: [duality, weak, feasible, slack, flat, gap, unbounded, brute, inf_form]
            .into_iter()
            .map(Tracker::done)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], ys: &[f64]) -> DiscreteInstance {
        let col = |v: &[f64]| Tensor::matrix(v.len(), 1, v.to_vec());
        DiscreteInstance::new(col(xs), col(ys), CostFn::half_squared()).unwrap()
    }

    #[test]
    fn c_transform_examples() {
        let inst = line(&[0.0, 1.0], &[2.0, 3.0]);
        let zero = c_transform(&[0.0, 0.0], &inst.cost, Side::Source);
        assert_eq!(zero, vec![2.0, 0.5]);
        let swap = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(c_transform(&[0.0, 0.0], &swap, Side::Source), vec![0.0, 0.0]);

        let mut rng = rng_for(0, 0);
        let inst = DiscreteInstance::random(9, 2, CostFn::half_squared(), &mut rng).unwrap();
        let psi: Vec<f64> = (0..9).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let cc = double_c_transform(&psi, &inst.cost);
        let (a, b) = (c_transform(&cc, &inst.cost, Side::Source), c_transform(&psi, &inst.cost, Side::Source));
        // Equal up to rounding of the subtractions.
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn assignment_examples() {
        let sol = solve_assignment(&line(&[0.0, 1.0], &[2.0, 3.0])).unwrap();
        assert_eq!(sol.perm, vec![0, 1]);
        assert_eq!(sol.optimal_cost, 2.0);
        let same = line(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        let sol = solve_assignment(&same).unwrap();
        assert_eq!(sol.perm, vec![0, 1, 2]);
        assert_eq!(sol.optimal_cost, 0.0);
    }

    #[test]
    fn sorted_line_is_monotone() {
        let mut rng = rng_for(1, 0);
        for _ in 0..20 {
            let mut xs: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut ys: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            assert_eq!(solve_assignment(&line(&xs, &ys)).unwrap().perm, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn semidual_and_duality() {
        let mut rng = rng_for(2, 0);
        let inst = DiscreteInstance::random(16, 2, CostFn::half_squared(), &mut rng).unwrap();
        let sol = solve_assignment(&inst).unwrap();
        assert!((semidual_value(&sol.duals.psi, &inst) - sol.optimal_cost).abs() < ORACLE_TOL);
        let zero = vec![0.0; 16];
        let row_min = c_transform(&zero, &inst.cost, Side::Source);
        assert_eq!(semidual_value(&zero, &inst), mean(&row_min));
        assert!(cconcavity_gap(&sol.duals.psi, &inst).abs() < ORACLE_TOL);
    }

    #[test]
    fn flatness_and_suboptimal_bijections() {
        let mut rng = rng_for(3, 0);
        let inst = DiscreteInstance::random(6, 2, CostFn::half_squared(), &mut rng).unwrap();
        let sol = solve_assignment(&inst).unwrap();
        assert_eq!(flatness_witness(&inst, &sol.perm, 50, 100.0, &mut rng).unwrap(), 0.0);
        let mut other = sol.perm.clone();
        other.swap(0, 1);
        assert_eq!(flatness_witness(&inst, &other, 50, 100.0, &mut rng).unwrap(), 0.0);
        assert!(discrete_saddle(&[0.0; 6], &other, &inst).unwrap() > sol.optimal_cost);
        let mut collapse = sol.perm.clone();
        collapse[1] = collapse[0];
        assert!(flatness_witness(&inst, &collapse, 5, 1.0, &mut rng).is_err());
        let small = saddle_spread(&inst, &collapse, 50, 1.0, &mut rng_for(4, 0)).unwrap();
        let large = saddle_spread(&inst, &collapse, 50, 100.0, &mut rng_for(4, 0)).unwrap();
        assert!(large > small && small > 0.0);
    }

    #[test]
    fn unboundedness_by_hand() {
        let inst = line(&[0.0, 1.0], &[0.0, 1.0]);
        let ms = [0.0, 1.0, 10.0, 100.0];
        let w = unboundedness_witness(&inst, &[0, 0], &ms).unwrap();
        assert_eq!(w.set, vec![1]);
        assert_eq!(w.sigma, 0.5);
        assert_eq!(w.values[0], w.baseline);
        for (m, v) in ms.iter().zip(&w.values) {
            assert!((v - (w.baseline + m / 2.0)).abs() < 1e-12);
        }
        assert!(w.values.windows(2).all(|p| p[1] > p[0]));
        assert!(unboundedness_witness(&inst, &[1, 0], &ms).is_err());
    }

    #[test]
    fn raised_entry_opens_a_gap() {
        let mut rng = rng_for(5, 0);
        let inst = DiscreteInstance::random(8, 2, CostFn::half_squared(), &mut rng).unwrap();
        let psi: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        assert!(cconcavity_gap(&psi, &inst) >= -ORACLE_TOL);
        let cc = double_c_transform(&psi, &inst.cost);
        assert!(cconcavity_gap(&cc, &inst).abs() < 1e-12);
        let mut raised = cc.clone();
        raised[3] += 0.5;
        assert!(cconcavity_gap(&raised, &inst) > 0.0);
    }

    #[test]
    fn inf_over_maps_is_the_semidual() {
        let mut rng = rng_for(6, 0);
        let inst = DiscreteInstance::random(5, 1, CostFn::half_squared(), &mut rng).unwrap();
        for _ in 0..10 {
            let psi: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!((min_over_maps(&psi, &inst).unwrap() - semidual_value(&psi, &inst)).abs() < ORACLE_TOL);
        }
    }

    #[test]
    fn csv_round_trip() {
        let inst = DiscreteInstance::random(4, 3, CostFn::squared(), &mut rng_for(7, 0)).unwrap();
        assert_eq!(DiscreteInstance::from_csv(&inst.to_csv()).unwrap(), inst);
        assert!(DiscreteInstance::from_csv("cost,2,weird\n").is_err());
    }

    #[test]
    fn suite_passes_and_detects_injected_duals() {
        let cfg = SuiteConfig {
            instances: 6,
            random_potentials: 50,
            ..SuiteConfig::default()
        };
        let report = run_suite(&cfg).unwrap();
        assert!(report.passed(), "{}", report.table());
        let bad = run_suite(&SuiteConfig {
            inject_suboptimal_duals: true,
            ..cfg
        })
        .unwrap();
        assert!(!bad.passed());
    }
}
