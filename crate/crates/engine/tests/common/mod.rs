//! Shared oracles for integration tests. These are deliberately independent
//! of the engine's production code paths: dense block-matrix formulas and
//! dense linear algebra stand against the O(H) recursions and low-rank
//! solves they certify.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ombrl_engine::gradient::JacobianBundle;

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / l2(b).max(1e-300)
}

/// Dense reference for the closed-loop gradient: forms the full nH x nH
/// block matrix N = A + B·K, inverts (I − γN) densely, and multiplies the
/// formula out.
pub fn dense_closed_loop_gradient(bundle: &JacobianBundle) -> Vec<f64> {
    let h = bundle.horizon();
    let n = bundle.state_dim();
    let m = bundle.action_dim();
    let gamma = bundle.gamma_discount;

    let mut nmat = DMatrix::zeros(n * h, n * h);
    let mut bmat = DMatrix::zeros(n * h, m * h);
    for j in 0..h.saturating_sub(1) {
        let closed = &bundle.a_blocks[j] + &bundle.b_blocks[j] * &bundle.k_blocks[j];
        nmat.view_mut(((j + 1) * n, j * n), (n, n)).copy_from(&closed);
        bmat.view_mut(((j + 1) * n, j * m), (n, m))
            .copy_from(&bundle.b_blocks[j]);
    }
    let eye = DMatrix::<f64>::identity(n * h, n * h);
    let inv = (eye - gamma * nmat).try_inverse().expect("nilpotent resolvent");
    let dg = DMatrix::from_row_slice(1, n * h, &bundle.dg_dx);
    let grad = dg * inv * bmat * &bundle.du_dphi;
    grad.row(0).iter().copied().collect()
}

/// Dense reference for the preconditioner solve: forms Λ explicitly.
pub fn dense_preconditioner_solve(
    grad: &[f64],
    du_dphi: &DMatrix<f64>,
    alpha: f64,
    epsilon: f64,
) -> Vec<f64> {
    let n_phi = grad.len();
    let g = DMatrix::from_column_slice(n_phi, 1, grad);
    let lambda = &g * g.transpose()
        + alpha * du_dphi.transpose() * du_dphi
        + DMatrix::identity(n_phi, n_phi) * epsilon;
    let sol = lambda
        .lu()
        .solve(&DMatrix::from_column_slice(n_phi, 1, grad))
        .expect("dense solve");
    sol.column(0).iter().copied().collect()
}

/// Dense reference for the preconditioner spectrum.
pub fn dense_preconditioner_spectrum(
    grad: &[f64],
    du_dphi: &DMatrix<f64>,
    alpha: f64,
    epsilon: f64,
) -> (f64, f64) {
    let n_phi = grad.len();
    let g = DMatrix::from_column_slice(n_phi, 1, grad);
    let lambda = &g * g.transpose()
        + alpha * du_dphi.transpose() * du_dphi
        + DMatrix::identity(n_phi, n_phi) * epsilon;
    let eigs = lambda.symmetric_eigen().eigenvalues;
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Central-difference derivative tools for nets, independent of the
/// reverse-mode implementation.
pub mod netfd {
    use nalgebra::DMatrix;
    use ombrl_engine::nn::MlpNet;

    pub fn grad_params(net: &MlpNet, input: &[f64], cotangent: &[f64], h: f64) -> Vec<f64> {
        let base = net.params().to_vec();
        (0..base.len())
            .map(|i| {
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
                cotangent
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (fp[k] - fm[k]))
                    .sum::<f64>()
                    / (2.0 * h)
            })
            .collect()
    }

    pub fn input_jacobian(net: &MlpNet, input: &[f64], h: f64) -> DMatrix<f64> {
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

    pub fn param_jacobian(net: &MlpNet, input: &[f64], h: f64) -> DMatrix<f64> {
        let out_dim = net.output_dim();
        let mut jac = DMatrix::zeros(out_dim, net.n_params());
        for i in 0..out_dim {
            let mut cot = vec![0.0; out_dim];
            cot[i] = 1.0;
            for (j, g) in grad_params(net, input, &cot, h).into_iter().enumerate() {
                jac[(i, j)] = g;
            }
        }
        jac
    }
}
