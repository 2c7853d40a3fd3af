//! Episode execution on the real plant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::plants::PlantConfig;
use crate::policy::{Controller, StepContext};
use crate::reference::ReferenceTrajectory;

/// One episode's full trace. `episode_cost` is exactly the sum of the
/// per-step costs, in step order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Visited states x_0..x_H (one more than the number of actions).
    pub states: Vec<Vec<f64>>,
    /// Executed (clamped) actions u_0..u_{H-1}.
    pub actions: Vec<Vec<f64>>,
    pub reference: ReferenceTrajectory,
    pub costs: Vec<f64>,
    pub episode_cost: f64,
    /// Per-step, per-component action clamp flags.
    pub u_clamped: Vec<Vec<bool>>,
    /// Number of steps where the state hit the state box.
    pub x_clamp_count: usize,
    /// False if the episode was truncated by a numeric fault.
    pub valid: bool,
}

impl RolloutRecord {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Rolls the controller out on the plant for the reference's full horizon.
/// The initial state is derived from the first reference point. A numeric
/// fault truncates the trace and flags the record invalid instead of
/// propagating the error.
pub fn rollout<R: Rng + ?Sized>(
    controller: &dyn Controller,
    plant: &PlantConfig,
    reference: &ReferenceTrajectory,
    noise_rng: Option<&mut R>,
) -> Result<RolloutRecord> {
    let horizon = reference.horizon();
    let x0 = plant.initial_state_for(reference.point(0))?;
    let mut record = RolloutRecord {
        states: vec![x0],
        actions: Vec::with_capacity(horizon),
        reference: reference.clone(),
        costs: Vec::with_capacity(horizon),
        episode_cost: 0.0,
        u_clamped: Vec::with_capacity(horizon),
        x_clamp_count: 0,
        valid: true,
    };
    let mut noise_rng = noise_rng;
    let n = plant.state_dim();

    for tau in 0..horizon {
        let x = record.states[tau].clone();
        let ctx = StepContext {
            x: &x,
            reference,
            tau,
            history: &record.actions,
        };
        let u = match controller.act(&ctx) {
            Ok(u) if u.iter().all(|v| v.is_finite()) => u,
            _ => {
                record.valid = false;
                break;
            }
        };
        let noise: Option<Vec<f64>> = if plant.noise_sigma > 0.0 {
            noise_rng.as_deref_mut().map(|rng| {
                (0..n)
                    .map(|_| StandardNormal.sample(rng))
                    .collect::<Vec<f64>>()
            })
        } else {
            None
        };
        let out = match plant.step(&x, &u, noise.as_deref()) {
            Ok(o) => o,
            Err(_) => {
                record.valid = false;
                break;
            }
        };
        let cost = plant.stage_cost(&x, &out.u_exec, reference.point(tau))?;
        record.costs.push(cost);
        record.actions.push(out.u_exec);
        record.u_clamped.push(out.u_clamped);
        if out.x_clamped {
            record.x_clamp_count += 1;
        }
        record.states.push(out.next);
    }
    record.episode_cost = record.costs.iter().sum();
    Ok(record)
}

/// Episode cost of a controller on one reference (no trace kept).
pub fn episode_cost<R: Rng + ?Sized>(
    controller: &dyn Controller,
    plant: &PlantConfig,
    reference: &ReferenceTrajectory,
    noise_rng: Option<&mut R>,
) -> Result<f64> {
    Ok(rollout(controller, plant, reference, noise_rng)?.episode_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{LinearParams, PlantConfig};
    use crate::policy::{FnController, MlpPolicy};
    use crate::reference::constant_reference;
    use crate::seed;
    use rand_chacha::ChaCha12Rng;

    fn no_noise() -> Option<&'static mut ChaCha12Rng> {
        None
    }

    #[test]
    fn zero_parameter_policy_emits_zero_actions() {
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(1, seed::Stream::PolicyInit);
        let mut policy = MlpPolicy::new(&plant, [8, 8], 2, 1, 10.0, &mut rng).unwrap();
        policy.net.set_params(vec![0.0; policy.net.n_params()]).unwrap();
        let reference = constant_reference(&plant, &[0.5], 20);
        let rec = rollout(&policy, &plant, &reference, no_noise()).unwrap();
        assert!(rec.actions.iter().all(|u| u[0] == 0.0));
        assert!(rec.valid);
        assert_eq!(rec.states.len(), 21);
        // Costs are pure reference drift: first step has x_0 = x̃_0 → cost 0.
        assert_eq!(rec.costs[0], 0.0);
        assert!(rec.episode_cost > 0.0);
        let sum: f64 = rec.costs.iter().sum();
        assert_eq!(rec.episode_cost, sum);
    }

    #[test]
    fn deadbeat_controller_beats_zero_policy() {
        // Linear plant with B = I: u_τ = x̃ − A x reaches the reference in
        // one step, so its episode cost must be far below the zero policy's.
        let mut rng = seed::rng_for(2, seed::Stream::PlantSetup);
        let mut params = LinearParams::stable_random(2, 2, 0.8, &mut rng);
        params.b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let plant = PlantConfig::linear_from(params.clone(), 0.01);
        let target = vec![0.8, -0.4];
        let reference = constant_reference(&plant, &target, 50);

        let zero = FnController {
            dim: 2,
            f: |_ctx: &StepContext| vec![0.0, 0.0],
        };
        let a = params.a_matrix();
        let deadbeat = FnController {
            dim: 2,
            f: move |ctx: &StepContext| {
                let want = ctx.reference.point(ctx.tau + 1);
                (0..2)
                    .map(|i| want[i] - (0..2).map(|j| a[(i, j)] * ctx.x[j]).sum::<f64>())
                    .collect()
            },
        };
        let c_zero = episode_cost(&zero, &plant, &reference, no_noise()).unwrap();
        let c_db = episode_cost(&deadbeat, &plant, &reference, no_noise()).unwrap();
        assert!(c_db < c_zero, "deadbeat {c_db} vs zero {c_zero}");
        assert!(c_db < 1e-18);
    }

    #[test]
    fn fixed_seed_rollouts_are_bit_identical() {
        let mut plant = PlantConfig::pendulum_default();
        plant.noise_sigma = 0.05;
        let mut rng = seed::rng_for(3, seed::Stream::PolicyInit);
        let policy = MlpPolicy::new(&plant, [8, 8], 2, 1, 10.0, &mut rng).unwrap();
        let reference = constant_reference(&plant, &[0.3], 30);
        let mut n1 = seed::rng_for_episode(3, seed::Stream::ProcessNoise, 0);
        let mut n2 = seed::rng_for_episode(3, seed::Stream::ProcessNoise, 0);
        let a = rollout(&policy, &plant, &reference, Some(&mut n1)).unwrap();
        let b = rollout(&policy, &plant, &reference, Some(&mut n2)).unwrap();
        assert_eq!(a.episode_cost.to_bits(), b.episode_cost.to_bits());
        for (p, q) in a.states.iter().zip(&b.states) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
        }
    }

    #[test]
    fn faulting_controller_truncates_and_flags() {
        let plant = PlantConfig::pendulum_default();
        let bomb = FnController {
            dim: 1,
            f: |ctx: &StepContext| {
                if ctx.tau >= 5 {
                    vec![f64::NAN]
                } else {
                    vec![0.0]
                }
            },
        };
        let reference = constant_reference(&plant, &[0.0], 20);
        let rec = rollout(&bomb, &plant, &reference, no_noise()).unwrap();
        assert!(!rec.valid);
        assert_eq!(rec.actions.len(), 5);
    }
}
