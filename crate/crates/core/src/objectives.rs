//! Transport costs and the empirical saddle objectives.
//!
//! * semi-dual: `F(ψ,t) = E_μ c(x,t(x)) − E_μ ψ(t(x)) + E_ν ψ(y)`
//! * max-correlation: `F̃(t,v) = E_μ ⟨x,t(x)⟩ − E_μ v(t(x)) + E_ν v(y)`
//! * OTM penalty: `E_μ ‖x − ∇v(t(x))‖²`
//!
//! The two expectations over `μ` share one batch; the `ν` expectation uses an
//! independent batch that may have a different size. Each mean has weight 1.

use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::models::{IcnnModel, MlpModel, Parametric, Potential, PotentialArch};
use crate::numcore::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostScaling {
    /// `(1/p) d^p`
    InverseP,
    /// `½ d^p`
    Half,
    /// `d^p`
    Unit,
}

/// `c(x,y) = s · ‖x − y‖^p` with `s` set by [`CostScaling`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFn {
    pub p: f64,
    pub scaling: CostScaling,
}

impl Default for CostFn {
    fn default() -> Self {
        Self::half_squared()
    }
}

impl CostFn {
    /// `½‖x − y‖²`, the internal default.
    pub fn half_squared() -> Self {
        Self {
            p: 2.0,
            scaling: CostScaling::Half,
        }
    }

    /// `‖x − y‖²`.
    pub fn squared() -> Self {
        Self {
            p: 2.0,
            scaling: CostScaling::Unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(OtError::Config(format!("cost exponent must exceed 1, got {}", self.p)));
        }
        Ok(())
    }

    pub fn factor(&self) -> f64 {
        match self.scaling {
            CostScaling::InverseP => 1.0 / self.p,
            CostScaling::Half => 0.5,
            CostScaling::Unit => 1.0,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        self.p == 2.0
    }

    /// Ratio between this cost and `½‖·‖²` (quadratic costs only). Optimal
    /// costs and semi-dual potentials scale by this factor.
    pub fn relative_to_half_squared(&self) -> Result<f64> {
        if !self.is_quadratic() {
            return Err(OtError::NonQuadraticCost("conversion from ½‖x−y‖²"));
        }
        Ok(self.factor() / 0.5)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if self.p == 2.0 {
            self.factor() * sq
        } else if self.p == 1.0 {
            self.factor() * sq.sqrt()
        } else {
            self.factor() * sq.powf(0.5 * self.p)
        }
    }

    /// `C[i][j] = c(x_i, y_j)`.
    pub fn matrix(&self, x: &Tensor, y: &Tensor) -> Tensor {
        let (n, m) = (x.rows(), y.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(self.eval(x.row(i), y.row(j)));
            }
        }
        Tensor::matrix(n, m, data)
    }

    /// Per-row cost `[B]` between two `[B, n]` batches on the graph. Only the
    /// quadratic cost is differentiable here.
    pub fn rows(&self, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        if !self.is_quadratic() {
            return Err(OtError::NonQuadraticCost("differentiable objectives"));
        }
        let d = g.sub(x, y)?;
        let sq = g.row_sq_norm(d)?;
        Ok(g.scale(sq, self.factor()))
    }
}

/// A transport map evaluated on a graph.
pub trait MapFn {
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

/// A scalar potential evaluated on a graph, returning `[B]` for `[B, n]` input.
pub trait PotentialFn {
    fn eval(&self, g: &mut Graph, y: Var) -> Result<Var>;

    fn input_grad(&self, g: &mut Graph, y: Var) -> Result<Var> {
        let v = self.eval(g, y)?;
        let total = g.sum(v);
        Ok(g.grad(total, &[y])?[0])
    }
}

impl<F> MapFn for F
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self(g, x)
    }
}

/// Closure-backed potential.
pub struct PotentialClosure<F>(pub F);

impl<F> PotentialFn for PotentialClosure<F>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    fn eval(&self, g: &mut Graph, y: Var) -> Result<Var> {
        (self.0)(g, y)
    }
}

/// A model together with its parameters placed on a graph.
pub struct Bound<'m, M> {
    pub model: &'m M,
    pub params: Vec<Var>,
}

impl<'m, M: Parametric> Bound<'m, M> {
    pub fn new(g: &mut Graph, model: &'m M) -> Self {
        let params = model.bind(g);
        Self { model, params }
    }
}

impl MapFn for Bound<'_, MlpModel> {
    fn map(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.model.forward(g, &self.params, x)
    }
}

impl PotentialFn for Bound<'_, Potential> {
    fn eval(&self, g: &mut Graph, y: Var) -> Result<Var> {
        self.model.forward(g, &self.params, y)
    }
}

impl PotentialFn for Bound<'_, IcnnModel> {
    fn eval(&self, g: &mut Graph, y: Var) -> Result<Var> {
        self.model.forward(g, &self.params, y)
    }
}

/// The identity transport map.
pub fn identity_map(_: &mut Graph, x: Var) -> Result<Var> {
    Ok(x)
}

fn check_dims(g: &Graph, tx: Var, y: Var) -> Result<()> {
    let (a, b) = (g.shape(tx), g.shape(y));
    if a.len() != 2 || b.len() != 2 || a[1] != b[1] {
        return Err(OtError::Shape(format!(
            "map output {a:?} and target batch {b:?} live in different spaces"
        )));
    }
    Ok(())
}

/// Semi-dual saddle functional `F(ψ,t)` on a source batch `x` and an
/// independent target batch `y`.
pub fn semi_dual_value(
    g: &mut Graph,
    t: &dyn MapFn,
    psi: &dyn PotentialFn,
    x: Var,
    y: Var,
    cost: &CostFn,
) -> Result<Var> {
    let tx = t.map(g, x)?;
    check_dims(g, tx, y)?;
    let c = cost.rows(g, x, tx)?;
    let transport = g.mean(c);
    let psi_tx = psi.eval(g, tx)?;
    let pushed = g.mean(psi_tx);
    let psi_y = psi.eval(g, y)?;
    let target = g.mean(psi_y);
    let partial = g.sub(transport, pushed)?;
    g.add(partial, target)
}

/// Max-correlation functional `F̃(t,v)`: maximized over `t`, minimized over `v`.
pub fn maxcorr_value(
    g: &mut Graph,
    t: &dyn MapFn,
    v: &dyn PotentialFn,
    x: Var,
    y: Var,
) -> Result<Var> {
    let tx = t.map(g, x)?;
    check_dims(g, tx, y)?;
    if g.shape(x) != g.shape(tx) {
        return Err(OtError::Shape("max-correlation needs t: R^n -> R^n".into()));
    }
    let corr = g.row_dot(x, tx)?;
    let corr = g.mean(corr);
    let v_tx = v.eval(g, tx)?;
    let pushed = g.mean(v_tx);
    let v_y = v.eval(g, y)?;
    let target = g.mean(v_y);
    let partial = g.sub(corr, pushed)?;
    g.add(partial, target)
}

/// First-order optimality residual of the inner problem
/// `sup_t ⟨x,t⟩ − v(t)`: `E‖x − ∇v(t(x))‖²`.
pub fn otm_penalty(g: &mut Graph, t: &dyn MapFn, v: &dyn PotentialFn, x: Var) -> Result<Var> {
    let tx = t.map(g, x)?;
    if g.shape(x) != g.shape(tx) {
        return Err(OtError::Shape("penalty needs t: R^n -> R^n".into()));
    }
    let grad = v.input_grad(g, tx)?;
    let resid = g.sub(x, grad)?;
    let sq = g.row_sq_norm(resid)?;
    Ok(g.mean(sq))
}

/// Transport map induced by a convex potential under the quadratic cost: the
/// input gradient of the potential.
pub fn map_from_potential(phi: &IcnnModel, x: &Tensor, cost: &CostFn) -> Result<Tensor> {
    if !cost.is_quadratic() {
        return Err(OtError::NonQuadraticCost("map recovery from a potential"));
    }
    phi.grad(x)
}

/// Solver variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Semi-dual with an MLP map and a c-concave ICNN potential.
    Otp,
    /// Semi-dual with an MLP map and an unconstrained MLP potential.
    MongeMap,
    /// Max-correlation with an MLP map and a convex ICNN potential.
    MaxCorr,
    /// Max-correlation plus the gradient-optimality penalty on the map.
    Otm,
}

pub const OTM_PENALTY_WEIGHT: f64 = 0.1;

impl Method {
    pub fn default_potential(self) -> PotentialArch {
        match self {
            Method::Otp => PotentialArch::CConcave,
            Method::MongeMap => PotentialArch::Mlp,
            Method::MaxCorr | Method::Otm => PotentialArch::Icnn,
        }
    }

    pub fn is_semi_dual(self) -> bool {
        matches!(self, Method::Otp | Method::MongeMap)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Otp => "otp",
            Method::MongeMap => "monge-map",
            Method::MaxCorr => "max-corr",
            Method::Otm => "otm",
        }
    }
}

/// A solver variant and its penalty weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveKind {
    pub method: Method,
    pub penalty_weight: f64,
}

impl ObjectiveKind {
    pub fn new(method: Method) -> Self {
        let penalty_weight = if method == Method::Otm { OTM_PENALTY_WEIGHT } else { 0.0 };
        Self {
            method,
            penalty_weight,
        }
    }

    pub fn with_penalty(method: Method, penalty_weight: f64) -> Result<Self> {
        let kind = Self {
            method,
            penalty_weight,
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_weight >= 0.0) {
            return Err(OtError::Config("penalty weight must be nonnegative".into()));
        }
        if self.method != Method::Otm && self.penalty_weight != 0.0 {
            return Err(OtError::Config(format!(
                "penalty weight must be zero for {}",
                self.method.name()
            )));
        }
        Ok(())
    }

    /// Loss minimized by the map player. The semi-dual map descends `F`; the
    /// max-correlation map ascends `F̃`, so it descends `−F̃` (plus the penalty).
    pub fn map_loss(
        &self,
        g: &mut Graph,
        t: &dyn MapFn,
        psi: &dyn PotentialFn,
        x: Var,
        y: Var,
        cost: &CostFn,
    ) -> Result<Var> {
        match self.method {
            Method::Otp | Method::MongeMap => semi_dual_value(g, t, psi, x, y, cost),
            Method::MaxCorr => {
                let f = maxcorr_value(g, t, psi, x, y)?;
                Ok(g.neg(f))
            }
            Method::Otm => {
                let f = maxcorr_value(g, t, psi, x, y)?;
                let neg = g.neg(f);
                let pen = otm_penalty(g, t, psi, x)?;
                let weighted = g.scale(pen, self.penalty_weight);
                g.add(neg, weighted)
            }
        }
    }

    /// Loss minimized by the potential player: `−F` for the semi-dual
    /// variants (ascent on `ψ`), `F̃` for the max-correlation variants.
    pub fn potential_loss(
        &self,
        g: &mut Graph,
        t: &dyn MapFn,
        psi: &dyn PotentialFn,
        x: Var,
        y: Var,
        cost: &CostFn,
    ) -> Result<Var> {
        if self.method.is_semi_dual() {
            let f = semi_dual_value(g, t, psi, x, y, cost)?;
            Ok(g.neg(f))
        } else {
            maxcorr_value(g, t, psi, x, y)
        }
    }
}
