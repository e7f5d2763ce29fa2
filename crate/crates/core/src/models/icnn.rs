use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Parametric;
use crate::error::{OtError, Result};
use crate::numcore::{Graph, Tensor, Var};

/// Dense input-convex network `Φ: R^n -> R`.
///
/// ```text
/// z_1     = softplus(A_0 x + b_0)
/// z_{l+1} = softplus(W_l z_l + A_l x + b_l)      W_l ≥ 0
/// core(x) = w_out · z_L + a_out · x + b_out      w_out ≥ 0
/// Φ(x)    = scale · (core(x) + α/2 ‖x‖²)
/// ```
///
/// Softplus is convex and nondecreasing, so nonnegative hidden weights make
/// every `z_l` convex in `x`; `α > 0` adds strong convexity with modulus
/// `scale · α`.
///
/// Parameter layout: `[A_0, b_0, (W_l, A_l, b_l) for l = 1..L-1, w_out, a_out, b_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcnnModel {
    dim: usize,
    hidden: Vec<usize>,
    alpha: f64,
    scale: f64,
    params: Vec<Tensor>,
}

impl IcnnModel {
    /// Weights from `N(0, init_std²)`; the constrained hidden weights store the
    /// absolute value of their draw. Biases start at zero; `scale` starts at 1.
    pub fn init<R: Rng>(
        dim: usize,
        hidden: &[usize],
        alpha: f64,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(OtError::Config(format!(
                "invalid ICNN dims: input {dim}, hidden {hidden:?}"
            )));
        }
        if !(init_std > 0.0) || !(alpha >= 0.0) {
            return Err(OtError::Config("ICNN init std must be > 0 and α ≥ 0".into()));
        }
        let normal = Normal::new(0.0, init_std).expect("positive std");
        let mut draw = |rows: usize, cols: usize, nonneg: bool| {
            let data = (0..rows * cols)
                .map(|_| {
                    let v: f64 = normal.sample(rng);
                    if nonneg {
                        v.abs()
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::matrix(rows, cols, data)
        };
        let mut params = vec![draw(hidden[0], dim, false), Tensor::zeros(&[hidden[0]])];
        for l in 1..hidden.len() {
            params.push(draw(hidden[l], hidden[l - 1], true));
            params.push(draw(hidden[l], dim, false));
            params.push(Tensor::zeros(&[hidden[l]]));
        }
        params.push(draw(1, *hidden.last().unwrap(), true));
        params.push(draw(1, dim, false));
        params.push(Tensor::zeros(&[1]));
        Ok(Self {
            dim,
            hidden: hidden.to_vec(),
            alpha,
            scale: 1.0,
            params,
        })
    }

    /// The ground-truth potential architecture: five hidden layers of width
    /// equal to the input dimension.
    pub fn ground_truth<R: Rng>(dim: usize, init_std: f64, alpha: f64, rng: &mut R) -> Result<Self> {
        Self::init(dim, &[dim; 5], alpha, init_std, rng)
    }

    /// `α/2 ‖x‖²` only: every weight and bias is zero, so the core network is
    /// the constant `0` after the output layer.
    pub fn pure_quadratic(dim: usize, hidden: &[usize], alpha: f64) -> Result<Self> {
        if dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(OtError::Config(format!(
                "invalid ICNN dims: input {dim}, hidden {hidden:?}"
            )));
        }
        let mut params = vec![Tensor::zeros(&[hidden[0], dim]), Tensor::zeros(&[hidden[0]])];
        for l in 1..hidden.len() {
            params.push(Tensor::zeros(&[hidden[l], hidden[l - 1]]));
            params.push(Tensor::zeros(&[hidden[l], dim]));
            params.push(Tensor::zeros(&[hidden[l]]));
        }
        params.push(Tensor::zeros(&[1, *hidden.last().unwrap()]));
        params.push(Tensor::zeros(&[1, dim]));
        params.push(Tensor::zeros(&[1]));
        Self::from_params(dim, hidden.to_vec(), alpha, 1.0, params)
    }

    pub fn from_params(
        dim: usize,
        hidden: Vec<usize>,
        alpha: f64,
        scale: f64,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let mut expect = vec![vec![hidden[0], dim], vec![hidden[0]]];
        for l in 1..hidden.len() {
            expect.push(vec![hidden[l], hidden[l - 1]]);
            expect.push(vec![hidden[l], dim]);
            expect.push(vec![hidden[l]]);
        }
        expect.push(vec![1, *hidden.last().unwrap()]);
        expect.push(vec![1, dim]);
        expect.push(vec![1]);
        if params.len() != expect.len()
            || params.iter().zip(&expect).any(|(p, e)| p.shape() != e.as_slice())
        {
            return Err(OtError::Shape(format!(
                "ICNN parameters do not match dim {dim}, hidden {hidden:?}"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            alpha,
            scale,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    /// Indices (into `params()`) of the entrywise-nonnegative weights.
    pub fn constrained_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (1..self.hidden.len()).map(|l| 2 + 3 * (l - 1)).collect();
        idx.push(self.params.len() - 3);
        idx
    }

    pub fn is_feasible(&self) -> bool {
        self.constrained_indices()
            .into_iter()
            .all(|i| self.params[i].data().iter().all(|&v| v >= 0.0))
    }

    /// Clamps every constrained weight at zero.
    pub fn project_nonneg(&mut self) {
        for i in self.constrained_indices() {
            self.params[i].data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    pub fn projected(mut self) -> Self {
        self.project_nonneg();
        self
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.dim {
            return Err(OtError::Shape(format!(
                "ICNN expects [B, {}] input, got {:?}",
                self.dim,
                g.shape(x)
            )));
        }
        if !self.is_feasible() {
            return Err(OtError::Invariant(
                "ICNN hidden weight below zero; project before evaluating".into(),
            ));
        }
        Ok(())
    }

    /// Potential values `[B]` for a `[B, n]` batch.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let mut z = g.affine(x, params[0], params[1])?;
        z = g.softplus(z);
        for l in 1..self.hidden.len() {
            let base = 2 + 3 * (l - 1);
            let hidden = g.matmul(z, params[base], false, true)?;
            let skip = g.affine(x, params[base + 1], params[base + 2])?;
            let pre = g.add(hidden, skip)?;
            z = g.softplus(pre);
        }
        let k = params.len();
        let hidden = g.matmul(z, params[k - 3], false, true)?;
        let skip = g.affine(x, params[k - 2], params[k - 1])?;
        let out = g.add(hidden, skip)?;
        let mut out = g.sum_cols(out)?;
        if self.alpha != 0.0 {
            let sq = g.row_sq_norm(x)?;
            let quad = g.scale(sq, 0.5 * self.alpha);
            out = g.add(out, quad)?;
        }
        Ok(if self.scale != 1.0 {
            g.scale(out, self.scale)
        } else {
            out
        })
    }

    /// `∇ₓΦ` for every row of `x`, as a differentiable `[B, n]` node. The result
    /// depends on the bound parameters (and on `x` itself), so it can sit
    /// inside an objective that is later differentiated again.
    pub fn input_grad(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let values = self.forward(g, params, x)?;
        let total = g.sum(values);
        Ok(g.grad(total, &[x])?[0])
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let out = self.forward(&mut g, &params, xv)?;
        Ok(g.value(out).clone())
    }

    /// Values and input gradients on plain tensors.
    pub fn value_and_grad(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let out = self.forward(&mut g, &params, xv)?;
        let total = g.sum(out);
        let grad = g.backward(total, &[xv])?.remove(0);
        Ok((g.value(out).clone(), grad))
    }

    pub fn grad(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.value_and_grad(x)?.1)
    }
}

impl Parametric for IcnnModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::{finite_diff_grad, relative_error};

    fn batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-r..r)).collect())
    }

    #[test]
    fn quadratic_only_output() {
        let m = IcnnModel::pure_quadratic(2, &[4, 4], 1.0).unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 0.0]]);
        assert_eq!(m.apply(&x).unwrap().data(), &[2.0]);
        let mut scaled = m.clone();
        scaled.set_scale(2.0);
        assert_eq!(scaled.apply(&x).unwrap().data(), &[4.0]);
        // ∇(‖x‖²/2) = x
        let xs = Tensor::from_rows(&[vec![0.3, -1.2], vec![5.0, 2.5]]);
        assert_eq!(m.grad(&xs).unwrap(), xs);
    }

    #[test]
    fn scale_doubles_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = IcnnModel::init(3, &[5, 5], 0.05, 0.3, &mut rng).unwrap();
        let x = batch(&mut rng, 7, 3, 2.0);
        let base = m.apply(&x).unwrap();
        let mut m2 = m.clone();
        m2.set_scale(2.0);
        let doubled = m2.apply(&x).unwrap();
        for (a, b) in base.data().iter().zip(doubled.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn init_is_feasible_and_seeded() {
        let a = IcnnModel::ground_truth(16, 0.14, 0.05, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = IcnnModel::ground_truth(16, 0.14, 0.05, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_feasible());
        assert_eq!(a.hidden(), &[16; 5]);
        assert_eq!(a.alpha(), 0.05);
    }

    #[test]
    fn projection_clamps_only_constrained_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = IcnnModel::init(2, &[3, 3], 0.0, 0.5, &mut rng).unwrap();
        let untouched = m.clone().projected();
        assert_eq!(untouched, m, "feasible model is a fixed point");
        let c = m.constrained_indices()[0];
        m.params_mut()[c].data_mut()[0] = -0.3;
        m.params_mut()[0].data_mut()[0] = -0.7;
        assert!(matches!(
            m.apply(&Tensor::zeros(&[1, 2])),
            Err(OtError::Invariant(_))
        ));
        m.project_nonneg();
        assert_eq!(m.params()[c].data()[0], 0.0);
        assert_eq!(m.params()[0].data()[0], -0.7);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..20 {
            let dim = 1 + trial % 3;
            let mut m = IcnnModel::init(dim, &[4, 3, 3], 0.1 * (trial % 2) as f64, 0.6, &mut rng).unwrap();
            m.set_scale(1.3);
            let x = batch(&mut rng, 3, dim, 2.0);

            // input gradient
            let numeric = finite_diff_grad(|xi| Ok(m.apply(xi)?.sum()), &x, 1e-5).unwrap();
            assert!(relative_error(&m.grad(&x).unwrap(), &numeric) <= 1e-4);

            // parameter gradients of Σ Φ and of Σ ‖∇Φ‖² (second-order path)
            let mut g = Graph::new();
            let params = m.bind(&mut g);
            let xv = g.leaf(x.clone());
            let out = m.forward(&mut g, &params, xv).unwrap();
            let total = g.sum(out);
            let grad_x = m.input_grad(&mut g, &params, xv).unwrap();
            let sq = g.square(grad_x);
            let grad_norm = g.sum(sq);
            let first = g.backward(total, &params).unwrap();
            let second = g.backward(grad_norm, &params).unwrap();
            for k in 0..params.len() {
                let value = |p: &Tensor| -> Result<f64> {
                    let mut probe = m.clone();
                    probe.params_mut()[k] = p.clone();
                    Ok(probe.apply(&x)?.sum())
                };
                let numeric = finite_diff_grad(value, &m.params()[k], 1e-5).unwrap();
                assert!(relative_error(&first[k], &numeric) <= 1e-4, "value grad param {k}");

                let grad_sq = |p: &Tensor| -> Result<f64> {
                    let mut probe = m.clone();
                    probe.params_mut()[k] = p.clone();
                    Ok(probe.grad(&x)?.data().iter().map(|v| v * v).sum())
                };
                let numeric = finite_diff_grad(grad_sq, &m.params()[k], 1e-5).unwrap();
                assert!(relative_error(&second[k], &numeric) <= 1e-4, "grad-norm param {k}");
            }
        }
    }

}

#[cfg(test)]
mod convexity {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pair_batches(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Tensor, Tensor, Tensor) {
        let mut draw = || Tensor::matrix(n, dim, (0..n * dim).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let (a, b) = (draw(), draw());
        let mid = a.zip_map(&b, |x, y| 0.5 * (x + y));
        (a, b, mid)
    }

    #[test]
    fn midpoint_convexity_and_strong_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = IcnnModel::init(16, &[16; 3], 0.05, 0.3, &mut rng).unwrap();
        m.set_scale(1.7);
        let (a, b, mid) = pair_batches(&mut rng, 10_000, 16);
        let (fa, ga) = m.value_and_grad(&a).unwrap();
        let (fb, gb) = m.value_and_grad(&b).unwrap();
        let fm = m.apply(&mid).unwrap();
        let margin = m.scale() * m.alpha();
        for i in 0..10_000 {
            assert!(fm.data()[i] <= 0.5 * (fa.data()[i] + fb.data()[i]) + 1e-9);
            let (mut inner, mut dist) = (0.0, 0.0);
            for k in 0..16 {
                let dx = a.row(i)[k] - b.row(i)[k];
                inner += (ga.row(i)[k] - gb.row(i)[k]) * dx;
                dist += dx * dx;
            }
            assert!(inner >= margin * dist - 1e-9);
        }
    }
}
