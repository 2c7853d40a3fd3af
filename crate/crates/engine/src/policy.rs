//! Control policy: an MLP over the current state, a lookahead window of the
//! reference, and a short window of previous commands.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::nn::{Activation, MlpNet};
use crate::plants::{PlantConfig, PlantKindTag};
use crate::reference::ReferenceTrajectory;

/// Everything a controller may look at when choosing the action at step τ.
pub struct StepContext<'a> {
    pub x: &'a [f64],
    pub reference: &'a ReferenceTrajectory,
    pub tau: usize,
    /// Executed actions u_0..u_{τ-1}.
    pub history: &'a [Vec<f64>],
}

/// Anything that can drive a rollout. Implemented by the learned policy and
/// by hand-built test controllers.
pub trait Controller {
    fn action_dim(&self) -> usize;
    fn act(&self, ctx: &StepContext) -> Result<Vec<f64>>;
}

/// Closure-backed controller for tests and analytic baselines.
pub struct FnController<F: Fn(&StepContext) -> Vec<f64>> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&StepContext) -> Vec<f64>> Controller for FnController<F> {
    fn action_dim(&self) -> usize {
        self.dim
    }

    fn act(&self, ctx: &StepContext) -> Result<Vec<f64>> {
        Ok((self.f)(ctx))
    }
}

/// The learned policy π_φ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub net: MlpNet,
    pub lookahead: usize,
    pub prev_actions: usize,
    pub state_dim: usize,
    pub ref_dim: usize,
    pub action_dim: usize,
    /// Per-dimension input scales (the "normalization factors").
    pub state_scale: Vec<f64>,
    pub ref_scale: Vec<f64>,
    /// Multiplies the network output to produce the command; also scales
    /// previous-command inputs back down.
    pub action_scale: f64,
}

impl MlpPolicy {
    pub fn new(
        plant: &PlantConfig,
        hidden: [usize; 2],
        lookahead: usize,
        prev_actions: usize,
        action_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        assert!(lookahead >= 1, "lookahead window must be >= 1");
        let state_dim = plant.state_dim();
        let ref_dim = plant.ref_dim();
        let action_dim = plant.action_dim();
        let input = state_dim + lookahead * ref_dim + prev_actions * action_dim;
        let mut net =
            MlpNet::init_random([input, hidden[0], hidden[1], action_dim], Activation::Tanh, rng)?;
        // Shrink the output layer so the initial controller is near-passive;
        // the plants are easily excited by large random feedback.
        let mut params = net.params().to_vec();
        let off = params.len() - (hidden[1] + 1) * action_dim;
        for w in &mut params[off..] {
            *w *= 0.1;
        }
        net.set_params(params)?;
        Ok(Self {
            net,
            lookahead,
            prev_actions,
            state_dim,
            ref_dim,
            action_dim,
            state_scale: plant.policy_state_scale(),
            ref_scale: ref_scale_for(plant),
            action_scale,
        })
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    /// Assembles the flat network input for step τ: scaled state, L reference
    /// points (repetition-padded at the end), P previous commands
    /// (zero-padded at the start).
    pub fn build_input(&self, ctx: &StepContext) -> Result<Vec<f64>> {
        check_len("policy state", ctx.x.len(), self.state_dim)?;
        let mut input = Vec::with_capacity(self.net.input_dim());
        for (v, s) in ctx.x.iter().zip(&self.state_scale) {
            input.push(v / s);
        }
        for k in 0..self.lookahead {
            let p = ctx.reference.point(ctx.tau + k);
            for (v, s) in p.iter().zip(&self.ref_scale) {
                input.push(v / s);
            }
        }
        for k in 1..=self.prev_actions {
            if ctx.tau >= k {
                let u = &ctx.history[ctx.tau - k];
                for v in u {
                    input.push(v / self.action_scale);
                }
            } else {
                input.extend(std::iter::repeat_n(0.0, self.action_dim));
            }
        }
        Ok(input)
    }

    /// ∂u/∂x at this step: the state block of the network's input Jacobian,
    /// chained through the input and output scaling.
    pub fn state_jacobian(&self, ctx: &StepContext) -> Result<DMatrix<f64>> {
        let input = self.build_input(ctx)?;
        let full = self.net.input_jacobian(&input)?;
        let mut k = DMatrix::zeros(self.action_dim, self.state_dim);
        for i in 0..self.action_dim {
            for j in 0..self.state_dim {
                k[(i, j)] = self.action_scale * full[(i, j)] / self.state_scale[j];
            }
        }
        Ok(k)
    }

    /// ∂u/∂φ at this step, shape (action_dim x n_params).
    pub fn param_jacobian_at(&self, ctx: &StepContext) -> Result<DMatrix<f64>> {
        let input = self.build_input(ctx)?;
        let mut j = self.net.param_jacobian(&input)?;
        j *= self.action_scale;
        Ok(j)
    }
}

impl Controller for MlpPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn act(&self, ctx: &StepContext) -> Result<Vec<f64>> {
        let input = self.build_input(ctx)?;
        let out = self.net.forward(&input)?;
        Ok(out.into_iter().map(|v| v * self.action_scale).collect())
    }
}

/// Per-dimension scale of reference points in policy inputs.
fn ref_scale_for(plant: &PlantConfig) -> Vec<f64> {
    match plant.kind {
        // Tracked quantity is the full state.
        PlantKindTag::Linear | PlantKindTag::Pendulum => plant.policy_state_scale(),
        PlantKindTag::ActuatedArm => plant
            .ref_box()
            .iter()
            .map(|b| (0.5 * (b[1] - b[0])).max(1e-8))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::PlantConfig;
    use crate::reference::constant_reference;
    use crate::seed;

    fn ctx_at<'a>(
        x: &'a [f64],
        reference: &'a ReferenceTrajectory,
        tau: usize,
        history: &'a [Vec<f64>],
    ) -> StepContext<'a> {
        StepContext {
            x,
            reference,
            tau,
            history,
        }
    }

    #[test]
    fn input_layout_and_padding() {
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(1, seed::Stream::PolicyInit);
        let policy = MlpPolicy::new(&plant, [8, 8], 3, 2, 10.0, &mut rng).unwrap();
        let reference = constant_reference(&plant, &[0.6], 4);
        let x = [0.3, -1.5];
        // τ=0: no history yet → previous-command slots are zero.
        let input = policy.build_input(&ctx_at(&x, &reference, 0, &[])).unwrap();
        assert_eq!(input.len(), 2 + 3 * 2 + 2);
        assert_eq!(&input[8..], &[0.0, 0.0]);
        // τ past the end: lookahead repeats the last reference point.
        let hist = vec![vec![5.0]; 4];
        let input = policy.build_input(&ctx_at(&x, &reference, 3, &hist)).unwrap();
        assert_eq!(input[2], 0.6 / policy.ref_scale[0]);
        assert_eq!(input[4], 0.6 / policy.ref_scale[0]);
        assert_eq!(input[8], 0.5); // 5.0 / action_scale
    }

    #[test]
    fn state_jacobian_matches_finite_differences() {
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(2, seed::Stream::PolicyInit);
        let policy = MlpPolicy::new(&plant, [8, 8], 2, 1, 7.0, &mut rng).unwrap();
        let reference = constant_reference(&plant, &[0.2], 10);
        let hist = vec![vec![1.0]];
        let x = [0.4, -0.7];
        let k = policy.state_jacobian(&ctx_at(&x, &reference, 1, &hist)).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            let up = policy.act(&ctx_at(&xp, &reference, 1, &hist)).unwrap();
            let um = policy.act(&ctx_at(&xm, &reference, 1, &hist)).unwrap();
            let fd = (up[0] - um[0]) / (2.0 * h);
            assert!((k[(0, j)] - fd).abs() < 1e-8);
        }
    }
}
