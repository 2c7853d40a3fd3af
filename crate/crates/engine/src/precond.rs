//! Trust-region preconditioner Λ = ∇̂g ∇̂gᵀ + α·(∂u/∂φ)ᵀ(∂u/∂φ) + ε·I and
//! the preconditioned policy update.
//!
//! Λ is n_φ x n_φ but has rank ≤ mH+1 above the ε shift, so solves and
//! spectra go through the low-rank factor U = [∇̂g | √α·(∂u/∂φ)ᵀ] and the
//! Woodbury identity; the dense matrix is never formed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_len, EngineError, Result};
use crate::policy::MlpPolicy;

/// Builds the n_φ x k low-rank factor with k = 1 + (mH if α > 0).
fn low_rank_factor(grad: &[f64], du_dphi: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n_phi = grad.len();
    let extra = if alpha > 0.0 { du_dphi.nrows() } else { 0 };
    let mut u = DMatrix::zeros(n_phi, 1 + extra);
    for (i, g) in grad.iter().enumerate() {
        u[(i, 0)] = *g;
    }
    if alpha > 0.0 {
        let s = alpha.sqrt();
        for r in 0..du_dphi.nrows() {
            for c in 0..n_phi {
                u[(c, 1 + r)] = s * du_dphi[(r, c)];
            }
        }
    }
    u
}

fn validate(grad: &[f64], du_dphi: &DMatrix<f64>, alpha: f64, epsilon: f64) -> Result<()> {
    if epsilon <= 0.0 {
        return Err(EngineError::contract(
            "epsilon must be positive (positive definiteness of the preconditioner)",
        ));
    }
    if alpha < 0.0 {
        return Err(EngineError::contract("alpha must be >= 0"));
    }
    check_len("du_dphi columns", du_dphi.ncols(), grad.len())?;
    Ok(())
}

/// Λ⁻¹·grad via Woodbury: (εI + UUᵀ)⁻¹ b = (b − U·(εI_k + UᵀU)⁻¹·Uᵀb)/ε.
pub fn preconditioner_solve(
    grad: &[f64],
    du_dphi: &DMatrix<f64>,
    alpha: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    validate(grad, du_dphi, alpha, epsilon)?;
    let b = DVector::from_column_slice(grad);
    let u = low_rank_factor(grad, du_dphi, alpha);
    let k = u.ncols();
    let gram = u.transpose() * &u + DMatrix::identity(k, k) * epsilon;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| EngineError::numeric("preconditioner Gram matrix not SPD"))?;
    let s = chol.solve(&(u.transpose() * &b));
    let out = (&b - &u * s) / epsilon;
    Ok(out.as_slice().to_vec())
}

/// Exact extreme eigenvalues of Λ from the low-rank factor's Gram spectrum.
pub fn preconditioner_spectrum(
    du_dphi: &DMatrix<f64>,
    grad: &[f64],
    alpha: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    validate(grad, du_dphi, alpha, epsilon)?;
    let n_phi = grad.len();
    let u = low_rank_factor(grad, du_dphi, alpha);
    let k = u.ncols();
    let gram = u.transpose() * &u;
    let mut eigs: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    let lambda_max = epsilon + eigs.first().copied().unwrap_or(0.0);
    // UUᵀ shares the Gram's nonzero spectrum; the rest of its n_φ
    // eigenvalues are zero, so the minimum lifts off ε only when k ≥ n_φ.
    let lambda_min = if n_phi <= k {
        epsilon + eigs[n_phi - 1]
    } else {
        epsilon
    };
    Ok((lambda_min, lambda_max))
}

/// Learning-rate schedule for the policy update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    Constant,
    /// η_t = η / sqrt(t+1).
    InvSqrt,
}

impl EtaSchedule {
    pub fn rate(self, eta: f64, episode: u64) -> f64 {
        match self {
            EtaSchedule::Constant => eta,
            EtaSchedule::InvSqrt => eta / ((episode + 1) as f64).sqrt(),
        }
    }
}

/// φ ← φ − η·Λ⁻¹·∇̂g, with an optional projection back into the parameter
/// box [−clip, clip]. Non-finite updates are rejected without mutating φ.
pub fn policy_update(
    policy: &mut MlpPolicy,
    grad: &[f64],
    du_dphi: &DMatrix<f64>,
    eta: f64,
    alpha: f64,
    epsilon: f64,
    param_clip: Option<f64>,
) -> Result<()> {
    if eta <= 0.0 {
        return Err(EngineError::contract("eta must be positive"));
    }
    check_len("grad", grad.len(), policy.n_params())?;
    let step = preconditioner_solve(grad, du_dphi, alpha, epsilon)?;
    let mut params = policy.net.params().to_vec();
    for (p, d) in params.iter_mut().zip(&step) {
        *p -= eta * d;
        if let Some(c) = param_clip {
            *p = p.clamp(-c, c);
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(EngineError::numeric("non-finite policy update"));
    }
    policy.net.set_params(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_instance(n_phi: usize, rows: usize, s: u64) -> (Vec<f64>, DMatrix<f64>) {
        let mut rng = seed::rng_for(s, seed::Stream::Diagnostics);
        let grad: Vec<f64> = (0..n_phi).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let j = DMatrix::from_fn(rows, n_phi, |_, _| rng.random_range(-1.0..=1.0));
        (grad, j)
    }

    #[test]
    fn zero_gradient_solves_to_zero() {
        let (_, j) = random_instance(20, 4, 1);
        let out = preconditioner_solve(&vec![0.0; 20], &j, 0.5, 1e-3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_sherman_morrison_closed_form() {
        // α = 0: Λ = g gᵀ + εI, so Λ⁻¹g = g / (‖g‖² + ε).
        let (grad, j) = random_instance(30, 3, 2);
        let eps = 1e-2;
        let out = preconditioner_solve(&grad, &j, 0.0, eps).unwrap();
        let s: f64 = grad.iter().map(|g| g * g).sum();
        for (o, g) in out.iter().zip(&grad) {
            assert!((o - g / (s + eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_trivial_cases() {
        let (_, j) = random_instance(25, 4, 3);
        let eps = 1e-3;
        let (lo, hi) = preconditioner_spectrum(&j, &vec![0.0; 25], 0.0, eps).unwrap();
        assert_eq!(lo, eps);
        assert_eq!(hi, eps);

        let (grad, j) = random_instance(25, 4, 4);
        let s: f64 = grad.iter().map(|g| g * g).sum();
        let (lo, hi) = preconditioner_spectrum(&j, &grad, 0.0, eps).unwrap();
        assert_eq!(lo, eps);
        assert!((hi - (s + eps)).abs() < 1e-12);
    }

    #[test]
    fn epsilon_must_be_positive() {
        let (grad, j) = random_instance(10, 2, 5);
        assert!(preconditioner_solve(&grad, &j, 0.1, 0.0).is_err());
        assert!(preconditioner_solve(&grad, &j, 0.1, -1.0).is_err());
    }

    #[test]
    fn large_epsilon_recovers_scaled_gradient() {
        let (grad, j) = random_instance(40, 6, 6);
        let mut last = f64::INFINITY;
        for eps in [1e2, 1e4, 1e6] {
            let out = preconditioner_solve(&grad, &j, 0.3, eps).unwrap();
            let scaled: Vec<f64> = out.iter().map(|v| v * eps).collect();
            let err = crate::testutil::rel_err(&scaled, &grad);
            assert!(err < last, "err {err} at eps {eps}");
            last = err;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn update_norm_respects_epsilon_bound() {
        use crate::plants::PlantConfig;
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(7, seed::Stream::PolicyInit);
        let mut policy = crate::policy::MlpPolicy::new(&plant, [6, 6], 2, 0, 1.0, &mut rng).unwrap();
        let n_phi = policy.n_params();
        let (grad, _) = random_instance(n_phi, 1, 8);
        let j = DMatrix::from_fn(4, n_phi, |_, _| 0.5);
        let before = policy.net.params().to_vec();
        let (eta, eps) = (0.3, 1e-2);
        policy_update(&mut policy, &grad, &j, eta, 0.2, eps, None).unwrap();
        let delta: f64 = policy
            .net
            .params()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(delta <= eta * gnorm / eps + 1e-9);
    }

    #[test]
    fn zero_grad_leaves_policy_unchanged() {
        use crate::plants::PlantConfig;
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(9, seed::Stream::PolicyInit);
        let mut policy = crate::policy::MlpPolicy::new(&plant, [6, 6], 2, 0, 1.0, &mut rng).unwrap();
        let n_phi = policy.n_params();
        let j = DMatrix::zeros(2, n_phi);
        let before = policy.net.params().to_vec();
        policy_update(&mut policy, &vec![0.0; n_phi], &j, 0.5, 0.1, 1e-3, None).unwrap();
        assert_eq!(policy.net.params(), &before[..]);
    }
}
