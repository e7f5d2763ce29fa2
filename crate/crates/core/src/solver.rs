//! Two-timescale alternating optimization: `K` descent steps on the map for
//! every step on the potential.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::BenchmarkProblem;
use crate::error::{OtError, Result};
use crate::metrics::{evaluate, EvalSet, MetricReport};
use crate::models::{Activation, IcnnModel, MlpModel, Parametric, Potential, PotentialArch};
use crate::numcore::{Graph, Tensor};
use crate::objectives::{Bound, CostFn, Method, ObjectiveKind, OTM_PENALTY_WEIGHT};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }
}

/// Everything that defines a training run besides the problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    /// Weight of the gradient-optimality penalty; `None` uses the method default.
    pub penalty_weight: Option<f64>,
    /// Potential architecture; `None` uses the method default.
    pub potential: Option<PotentialArch>,
    #[serde(rename = "K")]
    pub k: usize,
    pub eta_t: f64,
    pub eta_psi: f64,
    pub outer: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_batch: usize,
    /// Rows of the evaluation set used for the exact `d_KR` matching.
    pub dkr_samples: usize,
    pub map_hidden: Vec<usize>,
    pub potential_hidden: Vec<usize>,
    pub activation: Activation,
    pub init_std: f64,
    /// Strong-convexity weight of learned ICNN potentials.
    pub icnn_alpha: f64,
    pub cost: CostFn,
    pub divergence_threshold: f64,
    /// Perturbation noise relative to each parameter tensor's spread.
    pub perturb_noise: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Otp,
            penalty_weight: None,
            potential: None,
            k: 10,
            eta_t: 5e-4,
            eta_psi: 5e-4,
            outer: 2000,
            batch: 256,
            optimizer: OptimizerKind::default(),
            seed: 0,
            eval_every: 50,
            eval_batch: 512,
            dkr_samples: 512,
            map_hidden: vec![128, 128, 128],
            potential_hidden: vec![128, 128, 128],
            activation: Activation::LeakyRelu,
            init_std: 0.1,
            icnn_alpha: 0.05,
            cost: CostFn::half_squared(),
            divergence_threshold: 1e6,
            perturb_noise: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn objective(&self) -> Result<ObjectiveKind> {
        let weight = self.penalty_weight.unwrap_or(if self.method == Method::Otm {
            OTM_PENALTY_WEIGHT
        } else {
            0.0
        });
        ObjectiveKind::with_penalty(self.method, weight)
    }

    pub fn potential_arch(&self) -> PotentialArch {
        self.potential.unwrap_or(self.method.default_potential())
    }

    pub fn validate(&self) -> Result<()> {
        self.objective()?;
        self.cost.validate()?;
        if !self.cost.is_quadratic() {
            return Err(OtError::NonQuadraticCost("training"));
        }
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(OtError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.eta_t, "eta_t")?;
        positive(self.eta_psi, "eta_psi")?;
        positive(self.init_std, "init_std")?;
        positive(self.divergence_threshold, "divergence_threshold")?;
        if self.k == 0 || self.batch == 0 || self.eval_every == 0 || self.eval_batch == 0 {
            return Err(OtError::Config("K, batch, eval_every and eval_batch must be positive".into()));
        }
        if !(self.perturb_noise >= 0.0) || !(self.icnn_alpha >= 0.0) {
            return Err(OtError::Config("perturb_noise and icnn_alpha must be nonnegative".into()));
        }
        if self.map_hidden.contains(&0) || self.potential_hidden.contains(&0) {
            return Err(OtError::Config("hidden widths must be positive".into()));
        }
        let arch = self.potential_arch();
        if self.method.is_semi_dual() == (arch == PotentialArch::Icnn) {
            return Err(OtError::Config(format!(
                "potential {arch:?} does not fit method {}",
                self.method.name()
            )));
        }
        if !self.method.is_semi_dual() && self.cost != CostFn::half_squared() {
            return Err(OtError::Config(
                "max-correlation methods are defined for the ½‖x−y‖² cost".into(),
            ));
        }
        if arch != PotentialArch::Mlp && self.potential_hidden.is_empty() {
            return Err(OtError::Config("ICNN potentials need a hidden layer".into()));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(OtError::Config("invalid Adam constants".into()));
            }
        }
        Ok(())
    }
}

/// `κ = K η_t / η_ψ`.
pub fn kappa(cfg: &SolverConfig) -> f64 {
    cfg.k as f64 * cfg.eta_t / cfg.eta_psi
}

/// First-order optimizer state for one player.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(Tensor::zeros_like).collect();
        Self {
            kind,
            lr,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    /// One descent step `θ ← θ − lr · update(∇)`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= self.lr * d);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for (k, &d) in g.data().iter().enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * d;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * d * d;
                        p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Both players, their optimizers and the sampling stream.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub map: MlpModel,
    pub potential: Potential,
    pub map_opt: Optimizer,
    pub potential_opt: Optimizer,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
}

impl TrainState {
    pub fn init(dim: usize, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, stream::INIT);
        let mut widths = vec![dim];
        widths.extend_from_slice(&cfg.map_hidden);
        widths.push(dim);
        let map = MlpModel::init(&widths, cfg.activation, cfg.init_std, &mut rng)?;
        let potential = match cfg.potential_arch() {
            PotentialArch::Mlp => {
                let mut widths = vec![dim];
                widths.extend_from_slice(&cfg.potential_hidden);
                widths.push(1);
                Potential::Mlp(MlpModel::init(&widths, cfg.activation, cfg.init_std, &mut rng)?)
            }
            arch => {
                let v = IcnnModel::init(dim, &cfg.potential_hidden, cfg.icnn_alpha, cfg.init_std, &mut rng)?;
                if arch == PotentialArch::Icnn {
                    Potential::Icnn(v)
                } else {
                    Potential::CConcave(v)
                }
            }
        };
        Ok(Self::from_models(map, potential, cfg))
    }

    pub fn from_models(map: MlpModel, potential: Potential, cfg: &SolverConfig) -> Self {
        Self {
            map_opt: Optimizer::new(cfg.optimizer, cfg.eta_t, map.params()),
            potential_opt: Optimizer::new(cfg.optimizer, cfg.eta_psi, potential.params()),
            map,
            potential,
            rng: rng_for(cfg.seed, stream::TRAIN),
            iteration: 0,
        }
    }

    /// The potential in semi-dual form `ψ`, used for evaluation. A convex `v`
    /// from the max-correlation methods corresponds to `ψ = ½‖y‖² − v`.
    pub fn semi_dual_potential(&self) -> Potential {
        match &self.potential {
            Potential::Icnn(v) => Potential::CConcave(v.clone()),
            other => other.clone(),
        }
    }
}

fn check_loss(value: f64, threshold: f64, iteration: usize) -> Result<()> {
    if !value.is_finite() || value.abs() > threshold {
        return Err(OtError::Diverged { iteration, value });
    }
    Ok(())
}

fn check_grads(grads: &[Tensor], who: &str) -> Result<()> {
    if grads.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(OtError::NonFinite(format!("{who} gradient")))
    }
}

/// One map update on the given batches with the potential frozen. Returns the
/// map loss before the step.
pub fn map_step(state: &mut TrainState, cfg: &SolverConfig, objective: &ObjectiveKind, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let t = Bound::new(&mut g, &state.map);
    let psi = Bound::new(&mut g, &state.potential);
    let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
    let loss = objective.map_loss(&mut g, &t, &psi, xv, yv, &cfg.cost)?;
    let value = g.value(loss).item();
    check_loss(value, cfg.divergence_threshold, state.iteration)?;
    let grads = g.backward(loss, &t.params)?;
    check_grads(&grads, "map")?;
    state.map_opt.step(state.map.params_mut(), &grads);
    Ok(value)
}

/// `K` map updates, each on a fresh pair of batches.
pub fn inner_map_steps(state: &mut TrainState, cfg: &SolverConfig, objective: &ObjectiveKind, problem: &BenchmarkProblem) -> Result<f64> {
    let mut last = 0.0;
    for _ in 0..cfg.k {
        let x = problem.sample_source(cfg.batch, &mut state.rng);
        let y = problem.sample_target(cfg.batch, &mut state.rng);
        last = map_step(state, cfg, objective, &x, &y)?;
    }
    Ok(last)
}

/// One potential update with the map frozen, followed by the ICNN projection.
/// Returns the semi-dual or max-correlation value before the step.
pub fn potential_step(state: &mut TrainState, cfg: &SolverConfig, objective: &ObjectiveKind, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let t = Bound::new(&mut g, &state.map);
    let psi = Bound::new(&mut g, &state.potential);
    let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
    let loss = objective.potential_loss(&mut g, &t, &psi, xv, yv, &cfg.cost)?;
    let value = g.value(loss).item();
    let f = if objective.method.is_semi_dual() { -value } else { value };
    check_loss(f, cfg.divergence_threshold, state.iteration)?;
    let grads = g.backward(loss, &psi.params)?;
    check_grads(&grads, "potential")?;
    state.potential_opt.step(state.potential.params_mut(), &grads);
    state.potential.project();
    Ok(f)
}

/// One evaluated checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub metrics: MetricReport,
    pub wall_ms: f64,
}

/// Metrics right before and right after the potential was perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub iteration: usize,
    pub before: HistoryRow,
    pub after: HistoryRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub perturbation: Option<Perturbation>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    pub diverged: bool,
}

pub const HISTORY_HEADER: &str = "iteration,F,map_l2,map_cos,pot_mse,pot_grad_mse,flatness,dkr,wall_ms";

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricReport> {
        self.rows.iter().map(|r| &r.metrics)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration, m.f_value, m.map_l2, m.map_cos, m.pot_mse, m.pot_grad_mse, m.flatness, m.dkr, r.wall_ms
            );
        }
        s
    }

    /// Parses a history CSV. Perturbation and abort records live elsewhere.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| OtError::Parse("empty history".into()))?;
        if header.trim() != HISTORY_HEADER {
            return Err(OtError::Parse(format!(
                "history header must be `{HISTORY_HEADER}`, found `{header}`"
            )));
        }
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| OtError::Parse(format!("bad value `{v}`"))))
                .collect::<Result<_>>()?;
            if f.len() != 9 {
                return Err(OtError::Parse(format!("history row has {} columns, expected 9", f.len())));
            }
            rows.push(HistoryRow {
                iteration: f[0] as usize,
                metrics: MetricReport {
                    f_value: f[1],
                    map_l2: f[2],
                    map_cos: f[3],
                    pot_mse: f[4],
                    pot_grad_mse: f[5],
                    flatness: f[6],
                    dkr: f[7],
                    n_eval: 0,
                },
                wall_ms: f[8],
            });
        }
        Ok(Self {
            rows,
            perturbation: None,
            aborted: None,
            diverged: false,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Optional perturbation protocol: after `perturb_psi_at` outer iterations the
/// potential parameters receive noise, and training runs `extra_steps` more
/// iterations beyond the configured count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub perturb_psi_at: Option<usize>,
    pub extra_steps: usize,
}

/// Result of a run: history plus the final models.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub state: TrainState,
}

pub fn run_training(problem: &BenchmarkProblem, cfg: &SolverConfig) -> Result<TrainHistory> {
    Ok(run_training_with(problem, cfg, RunOptions::default())?.history)
}

pub fn run_training_with(problem: &BenchmarkProblem, cfg: &SolverConfig, opts: RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let total = cfg.outer + opts.extra_steps;
    if let Some(p) = opts.perturb_psi_at {
        if p > total {
            return Err(OtError::Config(format!(
                "perturbation at {p} lies beyond the last iteration {total}"
            )));
        }
    }
    let objective = cfg.objective()?;
    let mut eval_rng = rng_for(cfg.seed, stream::EVAL);
    let eval = EvalSet::from_problem(problem, cfg.eval_batch, &cfg.cost, &mut eval_rng)?;
    let mut state = TrainState::init(problem.dim(), cfg)?;
    let start = Instant::now();
    let mut history = TrainHistory {
        rows: Vec::new(),
        perturbation: None,
        aborted: None,
        diverged: false,
    };
    let checkpoint = |state: &TrainState| -> Result<HistoryRow> {
        let metrics = evaluate(&state.map, &state.semi_dual_potential(), &eval, &cfg.cost, cfg.dkr_samples)?;
        Ok(HistoryRow {
            iteration: state.iteration,
            metrics,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    };

    history.rows.push(checkpoint(&state)?);
    let mut perturb_rng = rng_for(cfg.seed, stream::PERTURB);
    for it in 0..=total {
        if opts.perturb_psi_at == Some(it) {
            let before = checkpoint(&state)?;
            state.potential.perturb(cfg.perturb_noise, &mut perturb_rng);
            let after = checkpoint(&state)?;
            history.perturbation = Some(Perturbation {
                iteration: it,
                before,
                after,
            });
        }
        if it == total {
            break;
        }
        state.iteration = it;
        let step = inner_map_steps(&mut state, cfg, &objective, problem).and_then(|_| {
            let x = problem.sample_source(cfg.batch, &mut state.rng);
            let y = problem.sample_target(cfg.batch, &mut state.rng);
            potential_step(&mut state, cfg, &objective, &x, &y)
        });
        match step {
            Ok(_) => {}
            Err(e @ (OtError::Diverged { .. } | OtError::NonFinite(_))) => {
                history.diverged = matches!(e, OtError::Diverged { .. });
                history.aborted = Some(e.to_string());
                return Ok(TrainOutcome { history, state });
            }
            Err(e) => return Err(e),
        }
        state.iteration = it + 1;
        if state.iteration % cfg.eval_every == 0 || state.iteration == total {
            let row = checkpoint(&state)?;
            let finite = row.metrics.map_l2.is_finite() && row.metrics.f_value.is_finite();
            history.rows.push(row);
            if !finite {
                history.aborted = Some(format!("non-finite metrics at iteration {}", state.iteration));
                return Ok(TrainOutcome { history, state });
            }
        }
    }
    Ok(TrainOutcome { history, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{BenchmarkSpec, GaussianSpec};

    fn small(method: Method) -> SolverConfig {
        SolverConfig {
            method,
            k: 2,
            outer: 20,
            batch: 32,
            eval_every: 10,
            eval_batch: 64,
            dkr_samples: 32,
            map_hidden: vec![8],
            potential_hidden: vec![8],
            ..SolverConfig::default()
        }
    }

    fn constant_map(theta: f64) -> MlpModel {
        MlpModel::linear(Tensor::matrix(1, 1, vec![0.0]), Tensor::vector(vec![theta])).unwrap()
    }

    fn zero_potential() -> Potential {
        Potential::Mlp(MlpModel::linear(Tensor::matrix(1, 1, vec![0.0]), Tensor::vector(vec![0.0])).unwrap())
    }

    #[test]
    fn kappa_examples() {
        let cfg = |k, eta_t, eta_psi| SolverConfig {
            k,
            eta_t,
            eta_psi,
            ..SolverConfig::default()
        };
        assert_eq!(kappa(&cfg(10, 5e-4, 5e-4)), 10.0);
        assert!((kappa(&cfg(1, 1.0, 0.01)) - 100.0).abs() < 1e-12);
        assert_eq!(kappa(&cfg(20, 5e-4, 5e-4)), 20.0);
    }

    #[test]
    fn hand_checked_map_step() {
        let cfg = SolverConfig {
            optimizer: OptimizerKind::Sgd,
            eta_t: 0.1,
            ..SolverConfig::default()
        };
        let obj = cfg.objective().unwrap();
        let mut state = TrainState::from_models(constant_map(1.0), zero_potential(), &cfg);
        let (x, y) = (Tensor::matrix(1, 1, vec![0.0]), Tensor::matrix(1, 1, vec![1.0]));
        let loss = map_step(&mut state, &cfg, &obj, &x, &y).unwrap();
        assert_eq!(loss, 0.5);
        assert!((state.map.params()[1].data()[0] - 0.9).abs() < 1e-15);

        let frozen = SolverConfig { eta_t: 0.0, ..cfg.clone() };
        let mut state = TrainState::from_models(constant_map(1.0), zero_potential(), &frozen);
        let before = state.map.param_fingerprint();
        map_step(&mut state, &frozen, &obj, &x, &y).unwrap();
        assert_eq!(state.map.param_fingerprint(), before);
    }

    #[test]
    fn potential_pressure_signs() {
        let cfg = SolverConfig {
            optimizer: OptimizerKind::Sgd,
            eta_psi: 0.1,
            ..SolverConfig::default()
        };
        let obj = cfg.objective().unwrap();
        let mut state = TrainState::from_models(MlpModel::linear(Tensor::matrix(1, 1, vec![1.0]), Tensor::vector(vec![0.0])).unwrap(), zero_potential(), &cfg);
        let x = Tensor::matrix(4, 1, vec![-5.0, -4.5, -4.0, -5.5]);
        let y = Tensor::matrix(4, 1, vec![5.0, 4.5, 4.0, 5.5]);
        let map_before = state.map.param_fingerprint();
        potential_step(&mut state, &cfg, &obj, &x, &y).unwrap();
        assert_eq!(state.map.param_fingerprint(), map_before);
        let after_y = state.potential.apply(&y).unwrap();
        let after_tx = state.potential.apply(&x).unwrap();
        assert!(after_y.data().iter().all(|&v| v > 0.0));
        assert!(after_tx.data().iter().all(|&v| v < 0.0));

        let frozen = SolverConfig { eta_psi: 0.0, ..cfg.clone() };
        let mut state = TrainState::from_models(constant_map(0.0), zero_potential(), &frozen);
        let before = state.potential.param_fingerprint();
        potential_step(&mut state, &frozen, &obj, &x, &y).unwrap();
        assert_eq!(state.potential.param_fingerprint(), before);
    }

    #[test]
    fn icnn_potential_stays_feasible() {
        let cfg = small(Method::Otp);
        let p = BenchmarkSpec::gaussian_2d().build().unwrap();
        let obj = cfg.objective().unwrap();
        let mut state = TrainState::init(2, &cfg).unwrap();
        let mut rng = rng_for(9, 0);
        for _ in 0..20 {
            let x = p.sample_source(32, &mut rng);
            let y = p.sample_target(32, &mut rng);
            potential_step(&mut state, &cfg, &obj, &x, &y).unwrap();
            match &state.potential {
                Potential::CConcave(v) => assert!(v.is_feasible()),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn phases_touch_only_their_player() {
        let cfg = small(Method::Otm);
        let p = BenchmarkSpec::gaussian_2d().build().unwrap();
        let obj = cfg.objective().unwrap();
        let mut state = TrainState::init(2, &cfg).unwrap();
        let (m0, p0) = (state.map.param_fingerprint(), state.potential.param_fingerprint());
        inner_map_steps(&mut state, &cfg, &obj, &p).unwrap();
        assert_ne!(state.map.param_fingerprint(), m0);
        assert_eq!(state.potential.param_fingerprint(), p0);
        let m1 = state.map.param_fingerprint();
        let x = p.sample_source(32, &mut state.rng);
        let y = p.sample_target(32, &mut state.rng);
        potential_step(&mut state, &cfg, &obj, &x, &y).unwrap();
        assert_eq!(state.map.param_fingerprint(), m1);
        assert_ne!(state.potential.param_fingerprint(), p0);
    }

    #[test]
    fn zero_iterations_and_determinism() {
        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let cfg = SolverConfig { outer: 0, ..small(Method::Otp) };
        assert_eq!(run_training(&p, &cfg).unwrap().rows.len(), 1);
        for method in [Method::Otp, Method::MongeMap, Method::MaxCorr, Method::Otm] {
            let cfg = small(method);
            let a = run_training(&p, &cfg).unwrap();
            let b = run_training(&p, &cfg).unwrap();
            assert_eq!(a.rows.len(), 3);
            assert!(a.aborted.is_none());
            let strip = |h: &TrainHistory| h.rows.iter().map(|r| r.metrics).collect::<Vec<_>>();
            assert_eq!(strip(&a), strip(&b));
        }
    }

    #[test]
    fn map_moves_toward_identity_with_frozen_zero_potential() {
        let spec = GaussianSpec::isotropic(2, 0.0, 1.0).unwrap();
        let p = BenchmarkProblem::gaussian(spec.clone(), spec).unwrap();
        let cfg = SolverConfig {
            method: Method::MongeMap,
            eta_t: 1e-2,
            eta_psi: 1e-2,
            ..small(Method::MongeMap)
        };
        let obj = cfg.objective().unwrap();
        let mut state = TrainState::init(2, &cfg).unwrap();
        state.potential.params_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
        let x = p.sample_source(256, &mut rng_for(1, 0));
        let dist = |s: &TrainState| crate::metrics::map_l2_error(&s.map.apply(&x).unwrap(), &x).unwrap();
        let initial = dist(&state);
        for _ in 0..200 {
            inner_map_steps(&mut state, &cfg, &obj, &p).unwrap();
        }
        assert!(dist(&state) < 0.1 * initial);
    }

    #[test]
    fn divergence_is_flagged() {
        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let cfg = SolverConfig {
            divergence_threshold: 1e-6,
            ..small(Method::Otp)
        };
        let h = run_training(&p, &cfg).unwrap();
        assert!(h.diverged);
        assert_eq!(h.rows.len(), 1);
    }

    #[test]
    fn perturbation_is_recorded_separately() {
        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let cfg = small(Method::Otp);
        let out = run_training_with(
            &p,
            &cfg,
            RunOptions {
                perturb_psi_at: Some(20),
                extra_steps: 10,
            },
        )
        .unwrap();
        let pert = out.history.perturbation.unwrap();
        assert_eq!(pert.iteration, 20);
        assert_eq!(pert.before.metrics.map_l2, pert.after.metrics.map_l2);
        assert_ne!(pert.before.metrics.pot_grad_mse, pert.after.metrics.pot_grad_mse);
        assert_eq!(out.history.last().unwrap().iteration, 30);
    }

    #[test]
    fn config_validation_and_csv() {
        assert!(SolverConfig { k: 0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig {
            method: Method::Otp,
            potential: Some(PotentialArch::Icnn),
            ..SolverConfig::default()
        }
        .validate()
        .is_err());
        let json = serde_json::to_string(&SolverConfig::default()).unwrap();
        let back: SolverConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SolverConfig::default());
        assert!(serde_json::from_str::<SolverConfig>(r#"{"bogus": 1}"#).is_err());

        let p = BenchmarkSpec::gaussian_1d().build().unwrap();
        let h = run_training(&p, &small(Method::Otp)).unwrap();
        let back = TrainHistory::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back.rows.len(), h.rows.len());
        assert_eq!(back.rows[1].metrics.map_l2, h.rows[1].metrics.map_l2);
        assert!(TrainHistory::from_csv("iteration,F\n").is_err());
    }
}
