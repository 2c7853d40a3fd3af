//! Closed-loop policy-gradient assembly.
//!
//! The per-step Jacobians of the (learned or true) dynamics and of the
//! policy are arranged as sparse block matrices over the horizon. The block
//! matrix N = A + B·K is strictly block-subdiagonal, hence nilpotent: N^H =
//! 0, so (I − γN)⁻¹ is a finite Neumann sum and the gradient
//!
//!   ∇̂_φ g = (dg/dx) · (I − γ(A + B·K))⁻¹ · B · (∂u/∂φ)
//!
//! is evaluated by an O(H) backward recursion over time, never by forming
//! the dense nH x nH inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, EngineError, Result};
use crate::model::DynamicsModel;
use crate::plants::PlantConfig;
use crate::policy::{MlpPolicy, StepContext};
use crate::rollout::RolloutRecord;

/// Source of per-step dynamics Jacobians: the learned model in production,
/// the plant's true Jacobians in oracle/diagnostic mode.
pub trait Linearization {
    fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

impl Linearization for DynamicsModel {
    fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        DynamicsModel::jacobians(self, x, u)
    }
}

/// f_θ ≡ f: feeds the plant's own Jacobians into the gradient machinery.
pub struct PlantLinearization<'a>(pub &'a PlantConfig);

impl Linearization for PlantLinearization<'_> {
    fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.0.true_jacobians(x, u)
    }
}

/// Block Jacobians of one episode plus the cost sensitivities.
///
/// Block (i, j) of A and B is nonzero only at i = j+1; K only at i = j.
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    /// H−1 state Jacobians ∂f(x_j, u_j)/∂x, each n x n.
    pub a_blocks: Vec<DMatrix<f64>>,
    /// H−1 action Jacobians ∂f(x_j, u_j)/∂u, each n x m.
    pub b_blocks: Vec<DMatrix<f64>>,
    /// H policy state-Jacobians ∂π(x_j, ·)/∂x, each m x n.
    pub k_blocks: Vec<DMatrix<f64>>,
    /// Total per-step cost sensitivity ∂c/∂x + (∂c/∂u)·K, stacked (length nH).
    pub dg_dx: Vec<f64>,
    /// Policy parameter Jacobians ∂u/∂φ stacked over steps (mH x n_φ).
    pub du_dphi: DMatrix<f64>,
    /// Discount on the A + B·K term; 1 is exact.
    pub gamma_discount: f64,
}

impl JacobianBundle {
    pub fn horizon(&self) -> usize {
        self.k_blocks.len()
    }

    pub fn state_dim(&self) -> usize {
        self.k_blocks.first().map_or(0, |k| k.ncols())
    }

    pub fn action_dim(&self) -> usize {
        self.k_blocks.first().map_or(0, |k| k.nrows())
    }
}

/// Builds the bundle for one rollout: dynamics Jacobians are evaluated at
/// the *visited* (x_τ, u_τ) pairs, policy Jacobians at the exact inputs the
/// policy saw. Saturated action components get their K and ∂u/∂φ rows
/// zeroed, since the executed command is locally constant there.
pub fn assemble_jacobians(
    lin: &dyn Linearization,
    policy: &MlpPolicy,
    plant: &PlantConfig,
    record: &RolloutRecord,
    gamma_discount: f64,
) -> Result<JacobianBundle> {
    if !record.valid {
        return Err(EngineError::contract("cannot assemble jacobians for a faulted rollout"));
    }
    let horizon = record.horizon();
    if horizon == 0 {
        return Err(EngineError::contract("empty rollout"));
    }
    if !(gamma_discount > 0.0 && gamma_discount <= 1.0) {
        return Err(EngineError::contract("gamma_discount must be in (0, 1]"));
    }
    let n = plant.state_dim();
    let m = plant.action_dim();
    let n_phi = policy.n_params();

    let mut a_blocks = Vec::with_capacity(horizon.saturating_sub(1));
    let mut b_blocks = Vec::with_capacity(horizon.saturating_sub(1));
    let mut k_blocks = Vec::with_capacity(horizon);
    let mut dg_dx = vec![0.0; n * horizon];
    let mut du_dphi = DMatrix::zeros(m * horizon, n_phi);

    for tau in 0..horizon {
        let x = &record.states[tau];
        let u = &record.actions[tau];
        let ctx = StepContext {
            x,
            reference: &record.reference,
            tau,
            history: &record.actions,
        };
        let mut k = policy.state_jacobian(&ctx)?;
        let mut j = policy.param_jacobian_at(&ctx)?;
        for (i, clamped) in record.u_clamped[tau].iter().enumerate() {
            if *clamped {
                k.row_mut(i).fill(0.0);
                j.row_mut(i).fill(0.0);
            }
        }
        du_dphi.rows_mut(tau * m, m).copy_from(&j);

        let (dcdx, dcdu) = plant.stage_cost_grad(x, u, record.reference.point(tau));
        for col in 0..n {
            let mut v = dcdx[col];
            for row in 0..m {
                v += dcdu[row] * k[(row, col)];
            }
            dg_dx[tau * n + col] = v;
        }
        k_blocks.push(k);

        if tau + 1 < horizon {
            let (dfdx, dfdu) = lin.jacobians(x, u)?;
            if dfdx.nrows() != n || dfdx.ncols() != n || dfdu.nrows() != n || dfdu.ncols() != m {
                return Err(EngineError::contract("linearization returned wrong shapes"));
            }
            a_blocks.push(dfdx);
            b_blocks.push(dfdu);
        }
    }

    Ok(JacobianBundle {
        a_blocks,
        b_blocks,
        k_blocks,
        dg_dx,
        du_dphi,
        gamma_discount,
    })
}

/// Evaluates the closed-loop gradient by the backward (adjoint) recursion
///
///   w_{H−1} = dg/dx_{H−1},
///   w_j     = dg/dx_j + γ (A_j + B_j K_j)ᵀ w_{j+1},
///   ∇̂_φ g  = Σ_j (B_jᵀ w_{j+1})ᵀ · (∂u_j/∂φ).
pub fn closed_loop_gradient(bundle: &JacobianBundle) -> Result<Vec<f64>> {
    let horizon = bundle.horizon();
    if horizon == 0 {
        return Err(EngineError::contract("empty bundle"));
    }
    let n = bundle.state_dim();
    let m = bundle.action_dim();
    check_len("dg_dx", bundle.dg_dx.len(), n * horizon)?;
    check_len("du_dphi rows", bundle.du_dphi.nrows(), m * horizon)?;
    check_len("a_blocks", bundle.a_blocks.len(), horizon - 1)?;
    check_len("b_blocks", bundle.b_blocks.len(), horizon - 1)?;
    let gamma = bundle.gamma_discount;
    let n_phi = bundle.du_dphi.ncols();
    let mut grad = DVector::zeros(n_phi);

    let block = |tau: usize| DVector::from_column_slice(&bundle.dg_dx[tau * n..(tau + 1) * n]);

    // w holds the adjoint for step j+1 while processing step j.
    let mut w = block(horizon - 1);
    for j in (0..horizon - 1).rev() {
        // Gradient contribution of u_j through x_{j+1}.
        let bw = bundle.b_blocks[j].transpose() * &w;
        grad += bundle.du_dphi.rows(j * m, m).transpose() * &bw;

        let closed = &bundle.a_blocks[j] + &bundle.b_blocks[j] * &bundle.k_blocks[j];
        w = block(j) + gamma * (closed.transpose() * w);
    }
    Ok(grad.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_mat(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_cost_sensitivity_gives_zero_gradient() {
        let bundle = JacobianBundle {
            a_blocks: vec![scalar_mat(0.5)],
            b_blocks: vec![scalar_mat(1.0)],
            k_blocks: vec![scalar_mat(0.2), scalar_mat(0.2)],
            dg_dx: vec![0.0, 0.0],
            du_dphi: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            gamma_discount: 1.0,
        };
        let g = closed_loop_gradient(&bundle).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn h2_scalar_system_matches_hand_expansion() {
        // n = m = 1, H = 2. Hand-expanded Neumann series:
        // grad = d1 · b0 · j0 (the last action never enters the cost window).
        let (a0, b0, k0, k1) = (0.7, 1.3, -0.4, 0.9);
        let (d0, d1) = (2.0, -1.5);
        let (j0, j1) = (0.6, -0.2);
        let bundle = JacobianBundle {
            a_blocks: vec![scalar_mat(a0)],
            b_blocks: vec![scalar_mat(b0)],
            k_blocks: vec![scalar_mat(k0), scalar_mat(k1)],
            dg_dx: vec![d0, d1],
            du_dphi: DMatrix::from_row_slice(2, 1, &[j0, j1]),
            gamma_discount: 1.0,
        };
        let g = closed_loop_gradient(&bundle).unwrap();
        let expected = d1 * b0 * j0;
        assert!((g[0] - expected).abs() < 1e-15, "{} vs {}", g[0], expected);
    }

    #[test]
    fn h1_bundle_reduces_to_single_step() {
        let bundle = JacobianBundle {
            a_blocks: vec![],
            b_blocks: vec![],
            k_blocks: vec![scalar_mat(0.3)],
            dg_dx: vec![5.0],
            du_dphi: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            gamma_discount: 1.0,
        };
        // No B blocks → u_0 only affects x_1, which is outside the window.
        let g = closed_loop_gradient(&bundle).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn assembled_closed_loop_matrix_is_nilpotent() {
        use crate::plants::{LinearParams, PlantConfig};
        use crate::policy::MlpPolicy;
        use crate::reference::constant_reference;
        use crate::rollout::rollout;
        use crate::seed;

        let mut rng = seed::rng_for(7, seed::Stream::PlantSetup);
        let params = LinearParams::stable_random(2, 1, 0.8, &mut rng);
        let plant = PlantConfig::linear_from(params, 0.01);
        let mut prng = seed::rng_for(7, seed::Stream::PolicyInit);
        let policy = MlpPolicy::new(&plant, [4, 4], 2, 0, 1.0, &mut prng).unwrap();
        let reference = constant_reference(&plant, &[0.4, -0.2], 5);
        let rec = rollout::<rand_chacha::ChaCha12Rng>(&policy, &plant, &reference, None).unwrap();
        let bundle =
            assemble_jacobians(&PlantLinearization(&plant), &policy, &plant, &rec, 1.0).unwrap();

        let (h, n) = (bundle.horizon(), bundle.state_dim());
        let mut nmat = DMatrix::zeros(n * h, n * h);
        for j in 0..h - 1 {
            let blk = &bundle.a_blocks[j] + &bundle.b_blocks[j] * &bundle.k_blocks[j];
            nmat.view_mut(((j + 1) * n, j * n), (n, n)).copy_from(&blk);
        }
        let mut power = DMatrix::<f64>::identity(n * h, n * h);
        for _ in 0..h {
            power = &power * &nmat;
        }
        assert!(power.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_jacobian_case_uses_plant_matrices() {
        use crate::plants::{LinearParams, PlantConfig};
        use crate::policy::MlpPolicy;
        use crate::reference::constant_reference;
        use crate::rollout::rollout;
        use crate::seed;

        let mut rng = seed::rng_for(8, seed::Stream::PlantSetup);
        let params = LinearParams::stable_random(3, 2, 0.85, &mut rng);
        let plant = PlantConfig::linear_from(params.clone(), 0.01);
        let mut prng = seed::rng_for(8, seed::Stream::PolicyInit);
        let policy = MlpPolicy::new(&plant, [4, 4], 1, 0, 1.0, &mut prng).unwrap();
        let reference = constant_reference(&plant, &[0.1, 0.2, -0.1], 4);
        let rec = rollout::<rand_chacha::ChaCha12Rng>(&policy, &plant, &reference, None).unwrap();
        let bundle =
            assemble_jacobians(&PlantLinearization(&plant), &policy, &plant, &rec, 1.0).unwrap();
        assert_eq!(bundle.a_blocks.len(), 3);
        for a in &bundle.a_blocks {
            assert_eq!(a, &params.a_matrix());
        }
        for b in &bundle.b_blocks {
            assert_eq!(b, &params.b_matrix());
        }
    }
}
