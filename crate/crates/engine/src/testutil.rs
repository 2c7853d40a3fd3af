//! Finite-difference oracles and error metrics shared by unit tests.
//! Deliberately independent of the reverse-mode code paths they check.

use nalgebra::DMatrix;

use crate::nn::MlpNet;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm()) / b.norm().max(1e-300)
}

/// Central-difference vᵀ·(∂out/∂params).
pub fn fd_grad_params(net: &MlpNet, input: &[f64], cotangent: &[f64], h: f64) -> Vec<f64> {
    let base = net.params().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = net.clone();
        let mut p = base.clone();
        p[i] += h;
        plus.set_params(p).unwrap();
        let mut minus = net.clone();
        let mut p = base.clone();
        p[i] -= h;
        minus.set_params(p).unwrap();
        let fp = plus.forward(input).unwrap();
        let fm = minus.forward(input).unwrap();
        grad[i] = cotangent
            .iter()
            .enumerate()
            .map(|(k, v)| v * (fp[k] - fm[k]))
            .sum::<f64>()
            / (2.0 * h);
    }
    grad
}

/// Central-difference ∂out/∂input.
pub fn fd_input_jacobian(net: &MlpNet, input: &[f64], h: f64) -> DMatrix<f64> {
    let out_dim = net.output_dim();
    let mut jac = DMatrix::zeros(out_dim, input.len());
    for j in 0..input.len() {
        let mut xp = input.to_vec();
        xp[j] += h;
        let mut xm = input.to_vec();
        xm[j] -= h;
        let fp = net.forward(&xp).unwrap();
        let fm = net.forward(&xm).unwrap();
        for i in 0..out_dim {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
