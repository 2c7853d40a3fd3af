//! Minimal two-hidden-layer feed-forward network with exact reverse-mode
//! derivatives.
//!
//! The same type backs both the dynamics model and the control policy. The
//! parameter vector is flat (`Vec<f64>`) so optimizers, checkpoints, and
//! finite-difference oracles can treat it uniformly. Layout per layer:
//! row-major weight matrix `(fan_out x fan_in)` followed by the bias vector,
//! layers in input-to-output order.
//!
//! Hidden layers share one activation; the output layer is always linear.
//! All math is f64 so derivative checks against central differences are
//! meaningful at 1e-6 relative error.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, EngineError, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Smooth default; required by the Jacobian-exactness test suite.
    Tanh,
    Relu,
    /// Makes the whole net an affine map; used by linear-capacity models.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z` given the already-computed activation value `a`.
    fn deriv(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Two-hidden-layer MLP with a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNet {
    /// (input, hidden1, hidden2, output) widths.
    pub layer_dims: [usize; 4],
    pub activation: Activation,
    params: Vec<f64>,
}

/// Number of parameters implied by the layer widths (biases included).
pub fn param_count(dims: [usize; 4]) -> usize {
    (0..3).map(|l| (dims[l] + 1) * dims[l + 1]).sum()
}

/// Forward-pass intermediates kept for the backward pass.
struct Trace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

impl MlpNet {
    /// Builds a net with all parameters zero.
    pub fn zeros(layer_dims: [usize; 4], activation: Activation) -> Result<Self> {
        for &d in &layer_dims {
            if d == 0 {
                return Err(EngineError::contract("layer widths must be positive"));
            }
        }
        Ok(Self {
            layer_dims,
            activation,
            params: vec![0.0; param_count(layer_dims)],
        })
    }

    /// Seeded init: uniform in [-s, s] with s = 1/sqrt(fan_in) per layer.
    pub fn init_random<R: Rng + ?Sized>(
        layer_dims: [usize; 4],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        let mut off = 0;
        for l in 0..3 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let s = 1.0 / (fan_in as f64).sqrt();
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-s..=s);
            }
            // Biases start at zero.
            off += (fan_in + 1) * fan_out;
        }
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[3]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameter vector. Rejects wrong lengths and non-finite entries.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_len("params", params.len(), self.params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EngineError::numeric("non-finite parameter entry"));
        }
        self.params = params;
        Ok(())
    }

    /// Writes the weight matrix and bias of layer `l` (0..3) from dense data.
    /// `weights` is row-major `(fan_out x fan_in)`.
    pub fn set_layer(&mut self, l: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
        let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        check_len("layer weights", weights.len(), fan_in * fan_out)?;
        check_len("layer biases", biases.len(), fan_out)?;
        let off = self.layer_offset(l);
        self.params[off..off + fan_in * fan_out].copy_from_slice(weights);
        self.params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out].copy_from_slice(biases);
        Ok(())
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| (self.layer_dims[k] + 1) * self.layer_dims[k + 1])
            .sum()
    }

    /// y = W x + b for layer `l`.
    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let off = self.layer_offset(l);
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
        out.clear();
        for i in 0..fan_out {
            let row = &w[i * fan_in..(i + 1) * fan_in];
            let mut acc = b[i];
            for (wj, xj) in row.iter().zip(x) {
                acc += wj * xj;
            }
            out.push(acc);
        }
    }

    fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        check_len("input", input.len(), self.layer_dims[0])?;
        let act = self.activation;
        let mut z1 = Vec::new();
        self.affine(0, input, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| act.apply(z)).collect();
        let mut z2 = Vec::new();
        self.affine(1, &a1, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| act.apply(z)).collect();
        let mut out = Vec::new();
        self.affine(2, &a2, &mut out);
        Ok(Trace {
            input: input.to_vec(),
            z1,
            a1,
            z2,
            a2,
            out,
        })
    }

    /// Evaluates the network. Deterministic in (params, input).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.out)
    }

    /// vᵀ·(∂output/∂params) as a flat vector, via one backward pass.
    pub fn grad_params(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("cotangent", cotangent.len(), self.layer_dims[3])?;
        let trace = self.forward_trace(input)?;
        Ok(self.backward_params(&trace, cotangent))
    }

    /// Shared backward kernel over a stored trace.
    fn backward_params(&self, t: &Trace, cotangent: &[f64]) -> Vec<f64> {
        let [d0, d1, d2, d3] = self.layer_dims;
        let act = self.activation;
        let mut grad = vec![0.0; self.params.len()];

        // Layer 2 (linear output): dW2 = v ⊗ a2, db2 = v, da2 = W2ᵀ v.
        let off2 = self.layer_offset(2);
        let w2 = &self.params[off2..off2 + d2 * d3];
        let mut da2 = vec![0.0; d2];
        for i in 0..d3 {
            let v = cotangent[i];
            let grow = &mut grad[off2 + i * d2..off2 + (i + 1) * d2];
            for j in 0..d2 {
                grow[j] = v * t.a2[j];
                da2[j] += w2[i * d2 + j] * v;
            }
            grad[off2 + d2 * d3 + i] = v;
        }

        // Layer 1: dz2 = da2 ∘ act'(z2).
        let dz2: Vec<f64> = (0..d2)
            .map(|j| da2[j] * act.deriv(t.z2[j], t.a2[j]))
            .collect();
        let off1 = self.layer_offset(1);
        let w1 = &self.params[off1..off1 + d1 * d2];
        let mut da1 = vec![0.0; d1];
        for i in 0..d2 {
            let v = dz2[i];
            let grow = &mut grad[off1 + i * d1..off1 + (i + 1) * d1];
            for j in 0..d1 {
                grow[j] = v * t.a1[j];
                da1[j] += w1[i * d1 + j] * v;
            }
            grad[off1 + d1 * d2 + i] = v;
        }

        // Layer 0: dz1 = da1 ∘ act'(z1).
        let dz1: Vec<f64> = (0..d1)
            .map(|j| da1[j] * act.deriv(t.z1[j], t.a1[j]))
            .collect();
        for i in 0..d1 {
            let v = dz1[i];
            let grow = &mut grad[i * d0..(i + 1) * d0];
            for j in 0..d0 {
                grow[j] = v * t.input[j];
            }
            grad[d0 * d1 + i] = v;
        }
        grad
    }

    /// ∂output/∂input at this point, shape (output_dim x input_dim).
    pub fn input_jacobian(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        let t = self.forward_trace(input)?;
        let [d0, d1, d2, d3] = self.layer_dims;
        let act = self.activation;

        // J = W2 · diag(a2') · W1 · diag(a1') · W0, built from the output side.
        let off2 = self.layer_offset(2);
        let w2 = &self.params[off2..off2 + d2 * d3];
        let off1 = self.layer_offset(1);
        let w1 = &self.params[off1..off1 + d1 * d2];
        let w0 = &self.params[..d0 * d1];

        // T = W2 · diag(a2') · W1, shape (d3 x d1).
        let mut tmat = vec![0.0; d3 * d1];
        for i in 0..d3 {
            for k in 0..d2 {
                let c = w2[i * d2 + k] * act.deriv(t.z2[k], t.a2[k]);
                if c == 0.0 {
                    continue;
                }
                for j in 0..d1 {
                    tmat[i * d1 + j] += c * w1[k * d1 + j];
                }
            }
        }
        // J = T · diag(a1') · W0, shape (d3 x d0).
        let mut jac = DMatrix::zeros(d3, d0);
        for i in 0..d3 {
            for k in 0..d1 {
                let c = tmat[i * d1 + k] * act.deriv(t.z1[k], t.a1[k]);
                if c == 0.0 {
                    continue;
                }
                for j in 0..d0 {
                    jac[(i, j)] += c * w0[k * d0 + j];
                }
            }
        }
        Ok(jac)
    }

    /// ∂output/∂params, shape (output_dim x n_params). Row i equals
    /// `grad_params` with cotangent e_i; both go through the same backward
    /// kernel.
    pub fn param_jacobian(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        let t = self.forward_trace(input)?;
        let out_dim = self.layer_dims[3];
        let mut jac = DMatrix::zeros(out_dim, self.params.len());
        let mut cot = vec![0.0; out_dim];
        for i in 0..out_dim {
            cot[i] = 1.0;
            let row = self.backward_params(&t, &cot);
            cot[i] = 0.0;
            for (j, g) in row.into_iter().enumerate() {
                jac[(i, j)] = g;
            }
        }
        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::testutil::{fd_grad_params, fd_input_jacobian, rel_err, rel_err_mat};

    fn random_net(dims: [usize; 4], seed_val: u64) -> MlpNet {
        let mut rng = seed::rng_for(seed_val, seed::Stream::ModelInit);
        let mut net = MlpNet::init_random(dims, Activation::Tanh, &mut rng).unwrap();
        // Spread parameters over [-1, 1] so derivative tests hit generic points.
        let p: Vec<f64> = net.params().iter().map(|w| w * 2.0).collect();
        let mut p = p;
        for (i, v) in p.iter_mut().enumerate() {
            if i % 3 == 0 {
                *v += 0.1;
            }
        }
        net.set_params(p).unwrap();
        net
    }

    fn random_input(len: usize, seed_val: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = seed::rng_for(seed_val, seed::Stream::Diagnostics);
        (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = MlpNet::zeros([3, 4, 4, 2], Activation::Tanh).unwrap();
        let out = net.forward(&[0.3, -0.7, 1.2]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_like_net_is_odd_at_origin() {
        let mut net = MlpNet::zeros([1, 1, 1, 1], Activation::Tanh).unwrap();
        net.set_layer(0, &[1.0], &[0.0]).unwrap();
        net.set_layer(1, &[1.0], &[0.0]).unwrap();
        net.set_layer(2, &[1.0], &[0.0]).unwrap();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_golden_value() {
        // Pinned once from this implementation; guards against layout changes.
        let net = random_net([2, 3, 3, 2], 99);
        let out = net.forward(&[0.5, -0.25]).unwrap();
        let golden = [-0.015348245600595396, -0.3074874934588877];
        assert!((out[0] - golden[0]).abs() < 1e-15, "out0 = {:?}", out);
        assert!((out[1] - golden[1]).abs() < 1e-15, "out1 = {:?}", out);
    }

    #[test]
    fn forward_rejects_bad_input_len() {
        let net = MlpNet::zeros([3, 4, 4, 2], Activation::Tanh).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn grad_params_zero_cotangent() {
        let net = random_net([3, 5, 4, 2], 7);
        let g = net.grad_params(&random_input(3, 1), &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grad_params_linear_layer_closed_form() {
        // Single effective linear layer: identity activation, pass-through
        // hiddens. Cotangent e_0 puts the input into row 0's weight slots.
        let mut net = MlpNet::zeros([2, 2, 2, 2], Activation::Identity).unwrap();
        net.set_layer(0, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        net.set_layer(1, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        net.set_layer(2, &[0.3, -0.2, 0.1, 0.4], &[0.0, 0.0]).unwrap();
        let x = [3.0, -5.0];
        let g = net.grad_params(&x, &[1.0, 0.0]).unwrap();
        let off2 = (2 + 1) * 2 * 2; // two earlier layers
        // Row 0 weight slots get a2 (= x here), row-0 bias slot gets 1.
        assert_eq!(g[off2], 3.0);
        assert_eq!(g[off2 + 1], -5.0);
        assert_eq!(g[off2 + 4], 1.0);
        assert_eq!(g[off2 + 5], 0.0);
    }

    #[test]
    fn grad_params_matches_finite_differences() {
        for s in 0..5 {
            let net = random_net([3, 6, 5, 2], 100 + s);
            let x = random_input(3, 200 + s);
            let cot = random_input(2, 300 + s);
            let analytic = net.grad_params(&x, &cot).unwrap();
            let fd = fd_grad_params(&net, &x, &cot, 1e-5);
            assert!(
                rel_err(&analytic, &fd) <= 1e-6,
                "seed {s}: rel err {}",
                rel_err(&analytic, &fd)
            );
        }
    }

    #[test]
    fn input_jacobian_zero_net() {
        let net = MlpNet::zeros([3, 4, 4, 2], Activation::Tanh).unwrap();
        let j = net.input_jacobian(&[0.1, 0.2, 0.3]).unwrap();
        assert!(j.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn input_jacobian_linear_net_is_weight_product() {
        let mut rng = seed::rng_for(5, seed::Stream::ModelInit);
        let net = MlpNet::init_random([3, 4, 4, 2], Activation::Identity, &mut rng).unwrap();
        let j = net.input_jacobian(&[0.4, -0.1, 0.9]).unwrap();
        // For identity activations the Jacobian is W2·W1·W0 everywhere.
        let j2 = net.input_jacobian(&[5.0, 2.0, -7.0]).unwrap();
        assert!(rel_err_mat(&j, &j2) < 1e-14);
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        for s in 0..5 {
            let net = random_net([4, 6, 5, 3], 400 + s);
            let x = random_input(4, 500 + s);
            let analytic = net.input_jacobian(&x).unwrap();
            let fd = fd_input_jacobian(&net, &x, 1e-5);
            assert!(rel_err_mat(&analytic, &fd) <= 1e-6);
        }
    }

    #[test]
    fn param_jacobian_transpose_action_matches_grad() {
        let net = random_net([3, 5, 5, 2], 11);
        let x = random_input(3, 12);
        let v = random_input(2, 13);
        let jac = net.param_jacobian(&x).unwrap();
        let direct = net.grad_params(&x, &v).unwrap();
        let via_rows: Vec<f64> = (0..net.n_params())
            .map(|j| (0..2).map(|i| jac[(i, j)] * v[i]).sum())
            .collect();
        assert!(rel_err(&via_rows, &direct) < 1e-14);
    }

    #[test]
    fn param_jacobian_one_param_linear() {
        // out = w·x with x = 3 → Jacobian = [3].
        let mut net = MlpNet::zeros([1, 1, 1, 1], Activation::Identity).unwrap();
        net.set_layer(0, &[1.0], &[0.0]).unwrap();
        net.set_layer(1, &[1.0], &[0.0]).unwrap();
        net.set_layer(2, &[2.0], &[0.0]).unwrap();
        let j = net.param_jacobian(&[3.0]).unwrap();
        // Output-layer weight slot sees a2 = x = 3 (earlier layers pass through).
        let off2 = 2 + 2;
        assert_eq!(j[(0, off2)], 3.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = random_net([3, 8, 8, 2], 21);
        let x = random_input(3, 22);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
