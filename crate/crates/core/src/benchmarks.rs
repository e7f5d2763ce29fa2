//! Benchmark problems with known optimal transport maps.
//!
//! Gaussian pairs with diagonal covariances have an affine optimal map in
//! closed form. The mixture benchmark pushes a Gaussian mixture through the
//! gradient of a random input-convex network, so `T* = ∇Φ` is exact by
//! construction and every target sample comes paired with its preimage.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::models::io::SavedModel;
use crate::models::IcnnModel;
use crate::numcore::Tensor;
use crate::objectives::CostFn;
use crate::rng::{rng_for, stream};

/// Draws i.i.d. batches `[n, dim]`.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor;
}

/// Diagonal Gaussian `N(mean, diag(std²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let spec = Self { mean, std };
        spec.validate()?;
        Ok(spec)
    }

    /// Same mean and std on every coordinate.
    pub fn isotropic(dim: usize, mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![mean; dim], vec![std; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(OtError::Config(
                "Gaussian mean and std need the same nonzero length".into(),
            ));
        }
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(OtError::Config("Gaussian std entries must be positive".into()));
        }
        Ok(())
    }
}

impl Sampler for GaussianSpec {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        sample_gaussian(self, n, rng)
    }
}

pub fn sample_gaussian(spec: &GaussianSpec, n: usize, rng: &mut dyn RngCore) -> Tensor {
    let d = spec.dim();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            data.push(spec.mean[k] + spec.std[k] * z);
        }
    }
    Tensor::matrix(n, d, data)
}

/// Coordinatewise affine map `x ↦ shift + slope ⊙ x` with positive slopes:
/// the gradient of `Φ(x) = Σ slope_i x_i²/2 + shift_i x_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub shift: Vec<f64>,
    pub slope: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let d = self.shift.len();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for k in 0..d {
                row[k] = self.shift[k] + self.slope[k] * row[k];
            }
        }
        out
    }

    pub fn inverse(&self, y: &Tensor) -> Tensor {
        let d = self.shift.len();
        let mut out = y.clone();
        for row in out.data_mut().chunks_mut(d) {
            for k in 0..d {
                row[k] = (row[k] - self.shift[k]) / self.slope[k];
            }
        }
        out
    }

    /// Brenier potential values `Φ(x)`.
    pub fn potential(&self, x: &Tensor) -> Vec<f64> {
        x.iter_rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(k, &v)| 0.5 * self.slope[k] * v * v + self.shift[k] * v)
                    .sum()
            })
            .collect()
    }

    /// Convex conjugate `Φ*(y) = Σ (y_i − shift_i)² / (2 slope_i)`.
    pub fn conjugate(&self, y: &Tensor) -> Vec<f64> {
        y.iter_rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(k, &v)| (v - self.shift[k]).powi(2) / (2.0 * self.slope[k]))
                    .sum()
            })
            .collect()
    }
}

/// Closed-form optimal transport between two diagonal Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticGaussianMap {
    pub map: AffineMap,
    /// Optimal cost under `c = ‖x − y‖²`.
    pub cost_squared: f64,
}

impl AnalyticGaussianMap {
    /// Semi-dual potential for `½‖x − y‖²`: `ψ*(y) = ½‖y‖² − Φ*(y)`.
    pub fn psi_star(&self, y: &Tensor) -> Vec<f64> {
        let conj = self.map.conjugate(y);
        y.iter_rows()
            .zip(conj)
            .map(|(r, c)| 0.5 * r.iter().map(|v| v * v).sum::<f64>() - c)
            .collect()
    }

    /// `∇ψ*(y) = y − (T*)⁻¹(y)`.
    pub fn psi_star_grad(&self, y: &Tensor) -> Tensor {
        let inv = self.map.inverse(y);
        y.zip_map(&inv, |a, b| a - b)
    }

    pub fn optimal_cost(&self, cost: &CostFn) -> Result<f64> {
        Ok(self.cost_squared * 0.5 * cost.relative_to_half_squared()?)
    }
}

/// `T*(x)_i = m2_i + (s2_i / s1_i)(x_i − m1_i)`, optimal cost
/// `Σ (Δmean_i)² + (Δstd_i)²` under `‖x − y‖²`.
pub fn analytic_gaussian_map(src: &GaussianSpec, dst: &GaussianSpec) -> Result<AnalyticGaussianMap> {
    src.validate()?;
    dst.validate()?;
    if src.dim() != dst.dim() {
        return Err(OtError::Config(format!(
            "Gaussian dimensions differ: {} vs {}",
            src.dim(),
            dst.dim()
        )));
    }
    let d = src.dim();
    let slope: Vec<f64> = (0..d).map(|k| dst.std[k] / src.std[k]).collect();
    let shift: Vec<f64> = (0..d).map(|k| dst.mean[k] - slope[k] * src.mean[k]).collect();
    let cost_squared = (0..d)
        .map(|k| (dst.mean[k] - src.mean[k]).powi(2) + (dst.std[k] - src.std[k]).powi(2))
        .sum();
    Ok(AnalyticGaussianMap {
        map: AffineMap { shift, slope },
        cost_squared,
    })
}

/// Source mixture of the ICNN benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: usize,
    pub radius: f64,
    pub weight_logit_std: f64,
    pub component_scale: f64,
    pub log_scale_std: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl MixtureSpec {
    /// Reduced configuration: 16 dimensions, 8 components, same constants.
    pub fn desk() -> Self {
        Self {
            dim: 16,
            components: 8,
            ..Self::full()
        }
    }

    /// 192 dimensions, 24 components.
    pub fn full() -> Self {
        Self {
            dim: 192,
            components: 24,
            radius: 2.5,
            weight_logit_std: 1.25,
            component_scale: 0.35,
            log_scale_std: 0.9,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.components == 0 {
            return Err(OtError::Config("mixture needs dim > 0 and components > 0".into()));
        }
        if !(self.radius > 0.0 && self.component_scale > 0.0)
            || !(self.weight_logit_std >= 0.0 && self.log_scale_std >= 0.0)
        {
            return Err(OtError::Config("mixture constants must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian mixture `Σ π_j N(m_j, scale² diag(s_j²))`.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component coordinate standard deviations `scale · s_j`.
    pub stds: Vec<Vec<f64>>,
    chooser: WeightedIndex<f64>,
}

/// Means are random directions at radius `radius`; weights are the softmax of
/// `N(0, weight_logit_std²)` logits; log-scales are `N(0, log_scale_std²)`,
/// mean-centered over the coordinates of each component.
pub fn build_mixture(spec: &MixtureSpec) -> Result<Mixture> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, stream::MIXTURE);
    let logit = Normal::new(0.0, spec.weight_logit_std).expect("finite std");
    let log_scale = Normal::new(0.0, spec.log_scale_std).expect("finite std");

    let mut means = Vec::with_capacity(spec.components);
    for _ in 0..spec.components {
        let dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        means.push(dir.into_iter().map(|v| spec.radius * v / norm).collect());
    }

    let logits: Vec<f64> = (0..spec.components).map(|_| logit.sample(&mut rng)).collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.into_iter().map(|e| e / z).collect();

    let mut stds = Vec::with_capacity(spec.components);
    for _ in 0..spec.components {
        let ls: Vec<f64> = (0..spec.dim).map(|_| log_scale.sample(&mut rng)).collect();
        let centre = ls.iter().sum::<f64>() / spec.dim as f64;
        stds.push(ls.iter().map(|l| spec.component_scale * (l - centre).exp()).collect());
    }

    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| OtError::Config(format!("mixture weights: {e}")))?;
    Ok(Mixture {
        weights,
        means,
        stds,
        chooser,
    })
}

impl Mixture {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Samples together with the component each row came from.
    pub fn sample_labeled(&self, n: usize, rng: &mut dyn RngCore) -> (Tensor, Vec<usize>) {
        let d = self.means[0].len();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let j = self.chooser.sample(rng);
            labels.push(j);
            for k in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                data.push(self.means[j][k] + self.stds[j][k] * z);
            }
        }
        (Tensor::matrix(n, d, data), labels)
    }
}

impl Sampler for Mixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        self.sample_labeled(n, rng).0
    }
}

/// Samples `∇Φ(x)` for `x` from a source sampler.
struct Pushforward {
    source: Arc<dyn Sampler>,
    phi: IcnnModel,
}

impl Sampler for Pushforward {
    fn dim(&self) -> usize {
        self.phi.dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let x = self.source.sample(n, rng);
        self.phi.grad(&x).expect("feasible ground-truth potential")
    }
}

/// The convex potential whose gradient is the optimal map.
#[derive(Clone, Debug)]
pub enum Brenier {
    Affine(AnalyticGaussianMap),
    Icnn(IcnnModel),
}

/// Known optimal transport solution of a benchmark.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub brenier: Brenier,
    /// Optimal cost under `½‖x − y‖²`.
    pub optimal_cost_half: f64,
    /// Standard error when the optimal cost is a Monte-Carlo estimate.
    pub optimal_cost_stderr: Option<f64>,
}

impl GroundTruth {
    pub fn map(&self, x: &Tensor) -> Result<Tensor> {
        match &self.brenier {
            Brenier::Affine(a) => Ok(a.map.apply(x)),
            Brenier::Icnn(phi) => phi.grad(x),
        }
    }

    /// `(Φ(x), ∇Φ(x))`.
    pub fn brenier(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        match &self.brenier {
            Brenier::Affine(a) => Ok((a.map.potential(x), a.map.apply(x))),
            Brenier::Icnn(phi) => {
                let (v, g) = phi.value_and_grad(x)?;
                Ok((v.into_data(), g))
            }
        }
    }

    pub fn optimal_cost(&self, cost: &CostFn) -> Result<f64> {
        Ok(self.optimal_cost_half * cost.relative_to_half_squared()?)
    }

    pub fn is_exact(&self) -> bool {
        self.optimal_cost_stderr.is_none()
    }
}

/// Outcome of the ICNN scale calibration `a = sqrt(E‖X‖²) / sqrt(E‖∇Φ₀(X)‖²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub mean_sq_norm_x: f64,
    pub mean_sq_norm_grad: f64,
    pub samples: usize,
}

/// Source and target samplers plus optional ground truth.
#[derive(Clone)]
pub struct BenchmarkProblem {
    pub name: String,
    source: Arc<dyn Sampler>,
    target: Arc<dyn Sampler>,
    ground_truth: Option<GroundTruth>,
    calibration: Option<Calibration>,
    mixture: Option<Arc<Mixture>>,
}

impl std::fmt::Debug for BenchmarkProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("ground_truth", &self.ground_truth.is_some())
            .finish()
    }
}

impl BenchmarkProblem {
    /// A problem from arbitrary samplers, without ground truth.
    pub fn from_samplers(name: &str, source: Arc<dyn Sampler>, target: Arc<dyn Sampler>) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(OtError::Config("source and target dimensions differ".into()));
        }
        Ok(Self {
            name: name.to_string(),
            source,
            target,
            ground_truth: None,
            calibration: None,
            mixture: None,
        })
    }

    pub fn gaussian(src: GaussianSpec, dst: GaussianSpec) -> Result<Self> {
        let analytic = analytic_gaussian_map(&src, &dst)?;
        let optimal_cost_half = 0.5 * analytic.cost_squared;
        Ok(Self {
            name: format!("gaussian-{}d", src.dim()),
            source: Arc::new(src),
            target: Arc::new(dst),
            ground_truth: Some(GroundTruth {
                brenier: Brenier::Affine(analytic),
                optimal_cost_half,
                optimal_cost_stderr: None,
            }),
            calibration: None,
            mixture: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn source(&self) -> &dyn Sampler {
        self.source.as_ref()
    }

    pub fn target(&self) -> &dyn Sampler {
        self.target.as_ref()
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn mixture(&self) -> Option<&Mixture> {
        self.mixture.as_deref()
    }

    pub fn sample_source(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        self.source.sample(n, rng)
    }

    pub fn sample_target(&self, n: usize, rng: &mut dyn RngCore) -> Tensor {
        self.target.sample(n, rng)
    }

    /// `(x, T*(x))` for fresh source samples.
    pub fn sample_pairs(&self, n: usize, rng: &mut dyn RngCore) -> Result<(Tensor, Tensor)> {
        let gt = self
            .ground_truth
            .as_ref()
            .ok_or(OtError::MissingGroundTruth("paired samples"))?;
        let x = self.source.sample(n, rng);
        let y = gt.map(&x)?;
        Ok((x, y))
    }
}

/// Architecture of the ground-truth potential `Φ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcnnPotentialSpec {
    pub hidden_layers: usize,
    /// Hidden width; defaults to the input dimension.
    pub width: Option<usize>,
    pub init_std: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for IcnnPotentialSpec {
    fn default() -> Self {
        Self {
            hidden_layers: 5,
            width: None,
            init_std: 0.14,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Samples used for the Monte-Carlo estimate of the optimal cost.
pub const COST_ESTIMATE_SAMPLES: usize = 8192;

/// Builds `Φ = a·Φ₀` from a random ICNN `Φ₀`, calibrated on `calib_samples`
/// source draws, and the target `ν = (∇Φ)♯μ`.
pub fn make_icnn_benchmark(
    mix: &MixtureSpec,
    potential: &IcnnPotentialSpec,
    calib_samples: usize,
) -> Result<BenchmarkProblem> {
    if calib_samples == 0 {
        return Err(OtError::Config("calibration needs at least one sample".into()));
    }
    let mixture = Arc::new(build_mixture(mix)?);
    let width = potential.width.unwrap_or(mix.dim);
    let hidden = vec![width; potential.hidden_layers.max(1)];
    let mut init_rng = rng_for(potential.seed, stream::POTENTIAL);
    let phi0 = IcnnModel::init(mix.dim, &hidden, potential.alpha, potential.init_std, &mut init_rng)?;
    let calibration = calibrate(&phi0, mixture.as_ref(), calib_samples, potential.seed)?;
    let mut phi = phi0;
    phi.set_scale(calibration.scale);
    with_potential(mix, mixture, phi, Some(calibration), potential.seed)
}

/// The same benchmark from a stored potential (scale already applied).
pub fn icnn_benchmark_from_potential(mix: &MixtureSpec, phi: IcnnModel, seed: u64) -> Result<BenchmarkProblem> {
    let mixture = Arc::new(build_mixture(mix)?);
    with_potential(mix, mixture, phi, None, seed)
}

fn with_potential(
    mix: &MixtureSpec,
    mixture: Arc<Mixture>,
    phi: IcnnModel,
    calibration: Option<Calibration>,
    seed: u64,
) -> Result<BenchmarkProblem> {
    if phi.dim() != mix.dim {
        return Err(OtError::Config("potential and mixture dimensions differ".into()));
    }
    let mut rng = rng_for(seed, stream::COST_ESTIMATE);
    let x = mixture.sample(COST_ESTIMATE_SAMPLES, &mut rng);
    let y = phi.grad(&x)?;
    let half = CostFn::half_squared();
    let costs: Vec<f64> = x.iter_rows().zip(y.iter_rows()).map(|(a, b)| half.eval(a, b)).collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let source: Arc<dyn Sampler> = mixture.clone();
    let target = Arc::new(Pushforward {
        source: source.clone(),
        phi: phi.clone(),
    });
    Ok(BenchmarkProblem {
        name: format!("icnn-mixture-{}d", mix.dim),
        source,
        target,
        ground_truth: Some(GroundTruth {
            brenier: Brenier::Icnn(phi),
            optimal_cost_half: mean,
            optimal_cost_stderr: Some((var / n).sqrt()),
        }),
        calibration,
        mixture: Some(mixture),
    })
}

/// Source draws used for calibration; regenerable from the potential seed.
pub fn calibration_samples(mixture: &Mixture, n: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, stream::CALIBRATION);
    mixture.sample(n, &mut rng)
}

fn calibrate(phi0: &IcnnModel, mixture: &Mixture, n: usize, seed: u64) -> Result<Calibration> {
    let x = calibration_samples(mixture, n, seed);
    let grad = phi0.grad(&x)?;
    let mean_sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>() / t.rows() as f64;
    let (mx, mg) = (mean_sq(&x), mean_sq(&grad));
    if !(mg > 0.0) || !mg.is_finite() || !mx.is_finite() {
        return Err(OtError::Config(format!(
            "degenerate calibration: E‖∇Φ₀‖² = {mg}"
        )));
    }
    Ok(Calibration {
        scale: mx.sqrt() / mg.sqrt(),
        mean_sq_norm_x: mx,
        mean_sq_norm_grad: mg,
        samples: n,
    })
}

/// Target-side potentials on paired samples `(x, y = ∇Φ(x))`, computed from
/// `x`, `y` and `Φ(x)` alone:
/// `Φ*(y) = ⟨x,y⟩ − Φ(x)`, `∇Φ*(y) = x`, `ψ*(y) = ½‖y‖² − Φ*(y)`, `∇ψ*(y) = y − x`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPairs {
    pub x: Tensor,
    pub y: Tensor,
    pub phi_conj: Vec<f64>,
    pub grad_phi_conj: Tensor,
    pub psi: Vec<f64>,
    pub grad_psi: Tensor,
}

pub fn target_potential_pairs(problem: &BenchmarkProblem, n: usize, rng: &mut dyn RngCore) -> Result<TargetPairs> {
    let gt = problem
        .ground_truth()
        .ok_or(OtError::MissingGroundTruth("target-potential diagnostics"))?;
    let x = problem.sample_source(n, rng);
    let (phi, y) = gt.brenier(&x)?;
    Ok(diagnostics_from_pairs(x, y, &phi))
}

pub fn diagnostics_from_pairs(x: Tensor, y: Tensor, phi: &[f64]) -> TargetPairs {
    let mut phi_conj = Vec::with_capacity(x.rows());
    let mut psi = Vec::with_capacity(x.rows());
    for (i, (xr, yr)) in x.iter_rows().zip(y.iter_rows()).enumerate() {
        let inner: f64 = xr.iter().zip(yr).map(|(a, b)| a * b).sum();
        let conj = inner - phi[i];
        let half_sq: f64 = 0.5 * yr.iter().map(|v| v * v).sum::<f64>();
        phi_conj.push(conj);
        psi.push(half_sq - conj);
    }
    let grad_psi = y.zip_map(&x, |a, b| a - b);
    TargetPairs {
        grad_phi_conj: x.clone(),
        x,
        y,
        phi_conj,
        psi,
        grad_psi,
    }
}

/// Serializable description of a benchmark, echoed into `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BenchmarkSpec {
    Gaussian {
        source: GaussianSpec,
        target: GaussianSpec,
    },
    IcnnMixture {
        #[serde(default)]
        mixture: MixtureSpec,
        #[serde(default)]
        potential: IcnnPotentialSpec,
        #[serde(default = "default_calibration_samples")]
        calibration_samples: usize,
    },
}

fn default_calibration_samples() -> usize {
    4096
}

impl BenchmarkSpec {
    /// `N(0,1) → N(2, 1.5²)`.
    pub fn gaussian_1d() -> Self {
        BenchmarkSpec::Gaussian {
            source: GaussianSpec::isotropic(1, 0.0, 1.0).unwrap(),
            target: GaussianSpec::isotropic(1, 2.0, 1.5).unwrap(),
        }
    }

    /// `N(0, I) → N(1, 2² I)` in two dimensions.
    pub fn gaussian_2d() -> Self {
        BenchmarkSpec::Gaussian {
            source: GaussianSpec::isotropic(2, 0.0, 1.0).unwrap(),
            target: GaussianSpec::isotropic(2, 1.0, 2.0).unwrap(),
        }
    }

    pub fn icnn_desk() -> Self {
        BenchmarkSpec::IcnnMixture {
            mixture: MixtureSpec::desk(),
            potential: IcnnPotentialSpec::default(),
            calibration_samples: default_calibration_samples(),
        }
    }

    pub fn build(&self) -> Result<BenchmarkProblem> {
        match self {
            BenchmarkSpec::Gaussian { source, target } => {
                BenchmarkProblem::gaussian(source.clone(), target.clone())
            }
            BenchmarkSpec::IcnnMixture {
                mixture,
                potential,
                calibration_samples,
            } => make_icnn_benchmark(mixture, potential, *calibration_samples),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BenchmarkSpec::Gaussian { source, .. } => source.dim(),
            BenchmarkSpec::IcnnMixture { mixture, .. } => mixture.dim,
        }
    }
}

/// Writes a benchmark directory: `meta.json`, `pairs.csv` (validation and
/// test splits, `split,x0..,y0..`) and, for ICNN benchmarks, `potential.model`.
pub fn export_benchmark(
    spec: &BenchmarkSpec,
    problem: &BenchmarkProblem,
    dir: &Path,
    split_size: usize,
    seed: u64,
) -> Result<()> {
    let gt = problem
        .ground_truth()
        .ok_or(OtError::MissingGroundTruth("benchmark export"))?;
    std::fs::create_dir_all(dir)?;

    let mut meta = serde_json::json!({
        "format": "otlab-benchmark",
        "version": 1,
        "name": problem.name,
        "dim": problem.dim(),
        "spec": spec,
        "seed": seed,
        "split_size": split_size,
        "log_scale_centering": "mean over coordinates within each component",
        "optimal_cost_half_squared": gt.optimal_cost_half,
        "optimal_cost_stderr": gt.optimal_cost_stderr,
    });
    match &gt.brenier {
        Brenier::Affine(a) => {
            meta["ground_truth"] = serde_json::json!({
                "kind": "affine",
                "shift": a.map.shift,
                "slope": a.map.slope,
                "optimal_cost_squared": a.cost_squared,
            });
        }
        Brenier::Icnn(phi) => {
            meta["ground_truth"] = serde_json::json!({
                "kind": "icnn-gradient",
                "potential_file": "potential.model",
                "scale": phi.scale(),
            });
            meta["calibration"] = serde_json::to_value(problem.calibration())?;
            SavedModel::Icnn(phi.clone()).save(&dir.join("potential.model"))?;
        }
    }
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;

    let d = problem.dim();
    let mut csv = String::from("split");
    for prefix in ["x", "y"] {
        for k in 0..d {
            let _ = write!(csv, ",{prefix}{k}");
        }
    }
    csv.push('\n');
    for (label, s) in [("val", stream::SPLIT_VAL), ("test", stream::SPLIT_TEST)] {
        let mut rng = rng_for(seed, s);
        let (x, y) = problem.sample_pairs(split_size, &mut rng)?;
        for (xr, yr) in x.iter_rows().zip(y.iter_rows()) {
            csv.push_str(label);
            for v in xr.iter().chain(yr) {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    std::fs::write(dir.join("pairs.csv"), csv)?;
    Ok(())
}

/// Reads `pairs.csv` back as `(split, x, y)` triples per split.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, Tensor, Tensor)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| OtError::Parse("empty pairs file".into()))?;
    let cols = header.split(',').count() - 1;
    if cols == 0 || cols % 2 != 0 {
        return Err(OtError::Parse(format!("bad pairs header `{header}`")));
    }
    let d = cols / 2;
    let mut splits: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().to_string();
        let values: Vec<f64> = fields
            .map(|f| f.parse().map_err(|_| OtError::Parse(format!("bad value `{f}`"))))
            .collect::<Result<_>>()?;
        if values.len() != cols {
            return Err(OtError::Parse("ragged pairs row".into()));
        }
        if splits.last().map_or(true, |s| s.0 != label) {
            splits.push((label, Vec::new(), Vec::new()));
        }
        let last = splits.last_mut().unwrap();
        last.1.extend_from_slice(&values[..d]);
        last.2.extend_from_slice(&values[d..]);
    }
    Ok(splits
        .into_iter()
        .map(|(l, x, y)| {
            let n = x.len() / d;
            (l, Tensor::matrix(n, d, x), Tensor::matrix(n, d, y))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (t.rows() as f64, t.cols());
        let mean: Vec<f64> = (0..d).map(|k| t.iter_rows().map(|r| r[k]).sum::<f64>() / n).collect();
        let var = (0..d)
            .map(|k| t.iter_rows().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n)
            .collect();
        (mean, var)
    }

    #[test]
    fn degenerate_gaussian_collapses_to_mean() {
        let spec = GaussianSpec::new(vec![1.5, -2.0], vec![1e-9, 1e-9]).unwrap();
        let x = sample_gaussian(&spec, 100, &mut rng_for(0, 0));
        assert!(x.iter_rows().all(|r| (r[0] - 1.5).abs() < 1e-7 && (r[1] + 2.0).abs() < 1e-7));
        assert!(GaussianSpec::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn gaussian_mean_within_clt_bound() {
        let spec = GaussianSpec::new(vec![0.3, -1.0], vec![2.0, 0.5]).unwrap();
        let n = 100_000;
        let x = sample_gaussian(&spec, n, &mut rng_for(1, 0));
        let (mean, _) = moments(&x);
        for k in 0..2 {
            assert!((mean[k] - spec.mean[k]).abs() < 3.0 * spec.std[k] / (n as f64).sqrt());
        }
        let again = sample_gaussian(&spec, 10, &mut rng_for(1, 0));
        assert_eq!(again.data(), &x.data()[..20]);
    }

    #[test]
    fn analytic_maps() {
        let one = analytic_gaussian_map(
            &GaussianSpec::isotropic(1, 0.0, 1.0).unwrap(),
            &GaussianSpec::isotropic(1, 2.0, 1.5).unwrap(),
        )
        .unwrap();
        assert_eq!(one.map.shift, vec![2.0]);
        assert_eq!(one.map.slope, vec![1.5]);
        assert_eq!(one.cost_squared, 4.25);
        assert_eq!(one.optimal_cost(&CostFn::half_squared()).unwrap(), 2.125);

        let same = GaussianSpec::new(vec![1.0, 2.0], vec![0.5, 3.0]).unwrap();
        let id = analytic_gaussian_map(&same, &same).unwrap();
        assert_eq!(id.map.slope, vec![1.0, 1.0]);
        assert_eq!(id.map.shift, vec![0.0, 0.0]);
        assert_eq!(id.cost_squared, 0.0);

        let two = analytic_gaussian_map(
            &GaussianSpec::isotropic(2, 0.0, 1.0).unwrap(),
            &GaussianSpec::isotropic(2, 1.0, 2.0).unwrap(),
        )
        .unwrap();
        assert_eq!(two.map.apply(&Tensor::from_rows(&[vec![0.5, -1.0]])).data(), &[2.0, -1.0]);
        assert_eq!(two.cost_squared, 4.0);
        assert!(analytic_gaussian_map(&same, &GaussianSpec::isotropic(1, 0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn analytic_potentials_are_consistent() {
        let a = analytic_gaussian_map(
            &GaussianSpec::new(vec![0.5, -1.0], vec![1.0, 0.5]).unwrap(),
            &GaussianSpec::new(vec![2.0, 1.0], vec![1.5, 2.0]).unwrap(),
        )
        .unwrap();
        let x = sample_gaussian(&GaussianSpec::isotropic(2, 0.0, 1.0).unwrap(), 50, &mut rng_for(2, 0));
        let y = a.map.apply(&x);
        let pairs = diagnostics_from_pairs(x.clone(), y.clone(), &a.map.potential(&x));
        let psi = a.psi_star(&y);
        let grad = a.psi_star_grad(&y);
        for i in 0..50 {
            assert!((pairs.psi[i] - psi[i]).abs() < 1e-10);
            assert!((pairs.phi_conj[i] - a.map.conjugate(&y)[i]).abs() < 1e-10);
        }
        assert!(pairs.grad_psi.data().iter().zip(grad.data()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn monte_carlo_cost_matches_closed_form() {
        for (src, dst) in [
            (GaussianSpec::isotropic(1, 0.0, 1.0).unwrap(), GaussianSpec::isotropic(1, 2.0, 1.5).unwrap()),
            (GaussianSpec::isotropic(2, 0.0, 1.0).unwrap(), GaussianSpec::isotropic(2, 1.0, 2.0).unwrap()),
        ] {
            let p = BenchmarkProblem::gaussian(src, dst).unwrap();
            let (x, y) = p.sample_pairs(100_000, &mut rng_for(3, 0)).unwrap();
            let c = CostFn::squared();
            let mc = x.iter_rows().zip(y.iter_rows()).map(|(a, b)| c.eval(a, b)).sum::<f64>() / 1e5;
            let exact = p.ground_truth().unwrap().optimal_cost(&c).unwrap();
            assert!((mc - exact).abs() / exact < 0.02, "{mc} vs {exact}");
        }
    }

    #[test]
    fn pushforward_matches_target_moments() {
        let p = BenchmarkProblem::gaussian(
            GaussianSpec::isotropic(2, 0.0, 1.0).unwrap(),
            GaussianSpec::new(vec![1.0, -3.0], vec![2.0, 0.7]).unwrap(),
        )
        .unwrap();
        let (_, pushed) = p.sample_pairs(10_000, &mut rng_for(4, 0)).unwrap();
        let direct = p.sample_target(10_000, &mut rng_for(5, 0));
        let ((m1, v1), (m2, v2)) = (moments(&pushed), moments(&direct));
        for k in 0..2 {
            assert!((m1[k] - m2[k]).abs() <= 0.05 * m2[k].abs().max(1.0));
            assert!((v1[k] - v2[k]).abs() <= 0.05 * v2[k]);
        }
    }

    #[test]
    fn single_component_mixture_sits_on_the_sphere() {
        let spec = MixtureSpec {
            dim: 5,
            components: 1,
            ..MixtureSpec::desk()
        };
        let mix = build_mixture(&spec).unwrap();
        assert_eq!(mix.weights, vec![1.0]);
        let r = mix.means[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r - 2.5).abs() < 1e-12);
        let log_mean = mix.stds[0].iter().map(|s| (s / 0.35).ln()).sum::<f64>() / 5.0;
        assert!(log_mean.abs() < 1e-12);
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let mix = build_mixture(&MixtureSpec::desk()).unwrap();
        assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let n = 100_000;
        let (_, labels) = mix.sample_labeled(n, &mut rng_for(6, 0));
        for (j, &w) in mix.weights.iter().enumerate() {
            let count = labels.iter().filter(|&&l| l == j).count() as f64;
            let sd = (n as f64 * w * (1.0 - w)).sqrt();
            assert!((count - n as f64 * w).abs() <= 3.0 * sd + 1.0, "component {j}");
        }
    }

    #[test]
    fn full_configuration_builds() {
        let mix = build_mixture(&MixtureSpec::full()).unwrap();
        assert_eq!(mix.components(), 24);
        assert_eq!(mix.dim(), 192);
    }

    #[test]
    fn quadratic_potential_calibrates_to_one() {
        let mix = build_mixture(&MixtureSpec::desk()).unwrap();
        let phi0 = IcnnModel::pure_quadratic(16, &[16], 1.0).unwrap();
        let cal = calibrate(&phi0, &mix, 512, 0).unwrap();
        assert_eq!(cal.scale, 1.0);
        let flat = IcnnModel::pure_quadratic(16, &[16], 0.0).unwrap();
        assert!(calibrate(&flat, &mix, 16, 0).is_err());
    }

    #[test]
    fn icnn_benchmark_is_deterministic() {
        let spec = BenchmarkSpec::icnn_desk();
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        let (xa, ya) = a.sample_pairs(64, &mut rng_for(7, 0)).unwrap();
        let (xb, yb) = b.sample_pairs(64, &mut rng_for(7, 0)).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ya, yb);
        let cal = a.calibration().unwrap();
        assert_eq!(cal.samples, 4096);
        assert!(a.ground_truth().unwrap().optimal_cost_stderr.unwrap() > 0.0);
    }

    #[test]
    fn self_conjugate_and_translated_quadratics() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.0]]);
        let phi: Vec<f64> = x.iter_rows().map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>()).collect();
        let d = diagnostics_from_pairs(x.clone(), x.clone(), &phi);
        assert_eq!(d.phi_conj, phi);
        assert!(d.psi.iter().all(|&v| v == 0.0));
        assert!(d.grad_psi.data().iter().all(|&v| v == 0.0));

        let c = [0.25, -1.0];
        let y = Tensor::from_rows(&[vec![1.25, 1.0], vec![-0.25, -1.0]]);
        let phi: Vec<f64> = x
            .iter_rows()
            .map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>() + r[0] * c[0] + r[1] * c[1])
            .collect();
        let d = diagnostics_from_pairs(x, y, &phi);
        assert_eq!(d.grad_psi.data(), &[0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        let ok = r#"{"kind":"gaussian","source":{"mean":[0],"std":[1]},"target":{"mean":[2],"std":[1.5]}}"#;
        let spec: BenchmarkSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(spec, BenchmarkSpec::gaussian_1d());
        let bad = r#"{"kind":"gaussian","source":{"mean":[0],"std":[1]},"target":{"mean":[2],"std":[1.5]},"extra":1}"#;
        assert!(serde_json::from_str::<BenchmarkSpec>(bad).is_err());
        let bad_inner = r#"{"kind":"icnn-mixture","mixture":{"dims":3}}"#;
        assert!(serde_json::from_str::<BenchmarkSpec>(bad_inner).is_err());
    }
}
