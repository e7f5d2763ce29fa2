use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Parametric;
use crate::error::{OtError, Result};
use crate::numcore::{Graph, Tensor, Var};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Softplus,
    LeakyRelu,
}

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Softplus => g.softplus(x),
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::LeakyRelu => "leaky-relu",
        }
    }
}

/// Fully connected network `R^in -> R^out` with an activation between layers
/// and a linear last layer.
///
/// Parameters are stored as `[w0, b0, w1, b1, ..]` with `w_l` of shape
/// `[widths[l+1], widths[l]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
}

impl MlpModel {
    /// `widths` runs from input dimension to output dimension, hidden layers in
    /// between. Weights are drawn from `N(0, init_std²)`, biases start at zero.
    pub fn init<R: Rng>(
        widths: &[usize],
        activation: Activation,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(OtError::Config(format!("invalid MLP widths {widths:?}")));
        }
        if !(init_std > 0.0) {
            return Err(OtError::Config("init std must be positive".into()));
        }
        let normal = Normal::new(0.0, init_std).expect("positive std");
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            params.push(Tensor::matrix(fan_out, fan_in, w));
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, validating every shape.
    pub fn from_params(widths: Vec<usize>, activation: Activation, params: Vec<Tensor>) -> Result<Self> {
        if widths.len() < 2 || params.len() != 2 * (widths.len() - 1) {
            return Err(OtError::Shape(format!(
                "MLP with widths {widths:?} needs {} tensors, got {}",
                2 * widths.len().saturating_sub(1),
                params.len()
            )));
        }
        for (l, pair) in widths.windows(2).enumerate() {
            if params[2 * l].shape() != [pair[1], pair[0]] || params[2 * l + 1].shape() != [pair[1]] {
                return Err(OtError::Shape(format!("MLP layer {l} parameter shapes")));
            }
        }
        Ok(Self {
            widths,
            activation,
            params,
        })
    }

    /// A single affine layer `x ↦ W x + b`.
    pub fn linear(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, inp) = (weight.rows(), weight.cols());
        Self::from_params(vec![inp, out], Activation::Softplus, vec![weight, bias])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    /// Graph forward pass on a `[B, in]` batch with bound parameters.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.input_dim() {
            return Err(OtError::Shape(format!(
                "MLP expects [B, {}] input, got {:?}",
                self.input_dim(),
                g.shape(x)
            )));
        }
        let mut h = x;
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            h = g.affine(h, params[2 * l], params[2 * l + 1])?;
            if l < last {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Forward pass on plain tensors.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let out = self.forward(&mut g, &params, xv)?;
        Ok(g.value(out).clone())
    }

    /// Product of per-layer spectral norms (estimated by power iteration),
    /// times 1 for either activation: an upper bound on the Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.layers())
            .map(|l| spectral_norm(self.weight(l), 200))
            .product()
    }
}

impl Parametric for MlpModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

/// Largest singular value of a `[rows, cols]` matrix by power iteration on WᵀW.
pub(crate) fn spectral_norm(w: &Tensor, iters: usize) -> f64 {
    let (rows, cols) = (w.rows(), w.cols());
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..iters {
        let u: Vec<f64> = (0..rows)
            .map(|i| w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let mut next = vec![0.0; cols];
        for (i, ui) in u.iter().enumerate() {
            for (n, a) in next.iter_mut().zip(w.row(i)) {
                *n += a * ui;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma = norm.sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
    }
    sigma
}
