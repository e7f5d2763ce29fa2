//! Parameterized function families: MLP transport maps and potentials, dense
//! input-convex networks, and the potential parameterizations used by the
//! solver variants.

mod icnn;
pub mod io;
mod mlp;

pub use icnn::IcnnModel;
pub use mlp::{Activation, MlpModel, LEAKY_SLOPE};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{Graph, Tensor, Var};

/// Anything with a flat list of trainable tensors.
pub trait Parametric {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];

    /// Places every parameter on `g` as a leaf.
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().iter().map(|p| g.leaf(p.clone())).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    /// Order-sensitive hash of the exact parameter bits.
    fn param_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in p.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Architecture of a learned potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialArch {
    /// Unconstrained MLP `ψ: R^n -> R`.
    Mlp,
    /// Convex ICNN `v` used directly (max-correlation variants).
    Icnn,
    /// `ψ(y) = ½‖y‖² − v(y)` with `v` an ICNN: c-concave for the quadratic cost.
    CConcave,
}

/// A learned scalar potential on the target space.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Mlp(MlpModel),
    Icnn(IcnnModel),
    CConcave(IcnnModel),
}

impl Potential {
    pub fn arch(&self) -> PotentialArch {
        match self {
            Potential::Mlp(_) => PotentialArch::Mlp,
            Potential::Icnn(_) => PotentialArch::Icnn,
            Potential::CConcave(_) => PotentialArch::CConcave,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Mlp(m) => m.input_dim(),
            Potential::Icnn(m) | Potential::CConcave(m) => m.dim(),
        }
    }

    /// Potential values `[B]` for a `[B, n]` batch.
    pub fn forward(&self, g: &mut Graph, params: &[Var], y: Var) -> Result<Var> {
        match self {
            Potential::Mlp(m) => {
                let out = m.forward(g, params, y)?;
                g.sum_cols(out)
            }
            Potential::Icnn(v) => v.forward(g, params, y),
            Potential::CConcave(v) => {
                let vy = v.forward(g, params, y)?;
                let sq = g.row_sq_norm(y)?;
                let half = g.scale(sq, 0.5);
                g.sub(half, vy)
            }
        }
    }

    /// `∇ψ` for every row of `y`, differentiable with respect to the bound
    /// parameters.
    pub fn input_grad(&self, g: &mut Graph, params: &[Var], y: Var) -> Result<Var> {
        let values = self.forward(g, params, y)?;
        let total = g.sum(values);
        Ok(g.grad(total, &[y])?[0])
    }

    pub fn value_and_grad(&self, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let yv = g.leaf(y.clone());
        let out = self.forward(&mut g, &params, yv)?;
        let total = g.sum(out);
        let grad = g.backward(total, &[yv])?.remove(0);
        Ok((g.value(out).clone(), grad))
    }

    pub fn apply(&self, y: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let yv = g.leaf(y.clone());
        let out = self.forward(&mut g, &params, yv)?;
        Ok(g.value(out).clone())
    }

    /// Restores the ICNN constraint after an optimizer step; no-op for MLPs.
    pub fn project(&mut self) {
        if let Potential::Icnn(v) | Potential::CConcave(v) = self {
            v.project_nonneg();
        }
    }

    /// Adds `N(0, (rel · std(p))²)` noise to every parameter tensor `p`, where
    /// `std(p)` is the empirical standard deviation of that tensor's entries.
    /// Tensors with zero spread (fresh biases) receive no noise.
    pub fn perturb<R: Rng>(&mut self, rel: f64, rng: &mut R) {
        for p in self.params_mut() {
            let n = p.len() as f64;
            let mean = p.sum() / n;
            let var = p.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = rel * var.sqrt();
            if std > 0.0 {
                let noise = Normal::new(0.0, std).expect("positive std");
                p.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
            }
        }
        self.project();
    }
}

impl Parametric for Potential {
    fn params(&self) -> &[Tensor] {
        match self {
            Potential::Mlp(m) => m.params(),
            Potential::Icnn(m) | Potential::CConcave(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        match self {
            Potential::Mlp(m) => m.params_mut(),
            Potential::Icnn(m) | Potential::CConcave(m) => m.params_mut(),
        }
    }
}
