//! Online dynamics model: a neural one-step predictor fitted to the replay
//! buffer by mean-squared prediction error.
//!
//! The network sees the normalized concatenation (x, u) and predicts either
//! the next state directly or, for mechanical plants, the state rate; in
//! rate mode the next state is reconstructed as x⁺ = x + dt·rate. The loss
//! is always measured in next-state units so both modes are comparable.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_update, AdamState};
use crate::error::{check_len, EngineError, Result};
use crate::nn::{Activation, MlpNet};
use crate::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Predict (x⁺ − x)/dt and reconstruct x⁺ = x + dt·prediction.
    Delta,
    /// Predict x⁺ directly.
    Absolute,
}

/// Per-dimension input/output standardization, frozen after a configurable
/// number of episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean_in: Vec<f64>,
    pub std_in: Vec<f64>,
    pub mean_out: Vec<f64>,
    pub std_out: Vec<f64>,
    pub frozen: bool,
}

impl Normalizer {
    pub fn identity(dim_in: usize, dim_out: usize) -> Self {
        Self {
            mean_in: vec![0.0; dim_in],
            std_in: vec![1.0; dim_in],
            mean_out: vec![0.0; dim_out],
            std_out: vec![1.0; dim_out],
            frozen: false,
        }
    }
}

fn mean_std(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            let d = r[k] - mean[k];
            var[k] += d * d / n;
        }
    }
    let std = var.iter().map(|v| v.sqrt().max(1e-8)).collect();
    (mean, std)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub net: MlpNet,
    pub mode: TargetMode,
    pub dt: f64,
    pub norm: Normalizer,
}

impl DynamicsModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: [usize; 2],
        activation: Activation,
        mode: TargetMode,
        dt: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dims = [state_dim + action_dim, hidden[0], hidden[1], state_dim];
        Ok(Self {
            net: MlpNet::init_random(dims, activation, rng)?,
            mode,
            dt,
            norm: Normalizer::identity(state_dim + action_dim, state_dim),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - self.net.output_dim()
    }

    /// Raw regression target for a transition.
    fn target(&self, t: &Transition) -> Vec<f64> {
        match self.mode {
            TargetMode::Delta => t
                .x_next
                .iter()
                .zip(&t.x)
                .map(|(xn, x)| (xn - x) / self.dt)
                .collect(),
            TargetMode::Absolute => t.x_next.clone(),
        }
    }

    /// Recomputes normalization statistics from the whole buffer. No-op once
    /// frozen.
    pub fn update_normalization(&mut self, buffer: &ReplayBuffer) {
        if self.norm.frozen || buffer.is_empty() {
            return;
        }
        let inputs: Vec<Vec<f64>> = buffer
            .transitions()
            .iter()
            .map(|t| t.x.iter().chain(&t.u).copied().collect())
            .collect();
        let targets: Vec<Vec<f64>> = buffer.transitions().iter().map(|t| self.target(t)).collect();
        let (mi, si) = mean_std(&inputs, self.net.input_dim());
        let (mo, so) = mean_std(&targets, self.net.output_dim());
        self.norm.mean_in = mi;
        self.norm.std_in = si;
        self.norm.mean_out = mo;
        self.norm.std_out = so;
    }

    pub fn freeze_normalization(&mut self) {
        self.norm.frozen = true;
    }

    fn normalized_input(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        x.iter()
            .chain(u)
            .enumerate()
            .map(|(k, v)| (v - self.norm.mean_in[k]) / self.norm.std_in[k])
            .collect()
    }

    /// Predicted next state f_θ(x, u).
    pub fn predict_next(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("state", x.len(), self.state_dim())?;
        check_len("action", u.len(), self.action_dim())?;
        let z = self.normalized_input(x, u);
        let o = self.net.forward(&z)?;
        let y: Vec<f64> = o
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.norm.std_out[k] + self.norm.mean_out[k])
            .collect();
        Ok(match self.mode {
            TargetMode::Delta => x.iter().zip(&y).map(|(xv, yv)| xv + self.dt * yv).collect(),
            TargetMode::Absolute => y,
        })
    }

    /// Jacobians of the predicted next state w.r.t. x and u.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.state_dim();
        let m = self.action_dim();
        check_len("state", x.len(), n)?;
        check_len("action", u.len(), m)?;
        let z = self.normalized_input(x, u);
        let jz = self.net.input_jacobian(&z)?;
        // Chain through output de-normalization, input normalization, and the
        // rate reconstruction.
        let gain = match self.mode {
            TargetMode::Delta => self.dt,
            TargetMode::Absolute => 1.0,
        };
        let mut dfdx = DMatrix::zeros(n, n);
        let mut dfdu = DMatrix::zeros(n, m);
        for i in 0..n {
            let so = self.norm.std_out[i] * gain;
            for j in 0..n {
                dfdx[(i, j)] = so * jz[(i, j)] / self.norm.std_in[j];
            }
            for j in 0..m {
                dfdu[(i, j)] = so * jz[(i, n + j)] / self.norm.std_in[n + j];
            }
        }
        if let TargetMode::Delta = self.mode {
            for i in 0..n {
                dfdx[(i, i)] += 1.0;
            }
        }
        Ok((dfdx, dfdu))
    }

    /// Mean one-step prediction error over a batch, in next-state units.
    pub fn loss(&self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(EngineError::contract("model loss on empty batch"));
        }
        let mut acc = 0.0;
        for t in batch {
            let pred = self.predict_next(&t.x, &t.u)?;
            acc += pred
                .iter()
                .zip(&t.x_next)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>();
        }
        Ok(acc / batch.len() as f64)
    }

    /// Loss and its gradient w.r.t. the network parameters.
    pub fn loss_grad(&self, batch: &[&Transition]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(EngineError::contract("model loss on empty batch"));
        }
        let gain = match self.mode {
            TargetMode::Delta => self.dt,
            TargetMode::Absolute => 1.0,
        };
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.net.n_params()];
        for t in batch {
            let z = self.normalized_input(&t.x, &t.u);
            let o = self.net.forward(&z)?;
            let mut cot = vec![0.0; o.len()];
            for k in 0..o.len() {
                let y = o[k] * self.norm.std_out[k] + self.norm.mean_out[k];
                let pred = match self.mode {
                    TargetMode::Delta => t.x[k] + self.dt * y,
                    TargetMode::Absolute => y,
                };
                let r = pred - t.x_next[k];
                loss += r * r * inv_b;
                cot[k] = 2.0 * r * gain * self.norm.std_out[k] * inv_b;
            }
            let g = self.net.grad_params(&z, &cot)?;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        Ok((loss, grad))
    }
}

/// Outcome of one episode's worth of inner model-learning steps.
#[derive(Debug, Clone, Copy)]
pub struct ModelUpdateStats {
    pub last_batch_loss: f64,
    pub skipped_steps: usize,
}

/// Runs `n_inner` Adam steps on fresh minibatches from the buffer. A zero
/// learning rate leaves the model untouched; non-finite gradients skip the
/// step and are counted instead of propagating.
pub fn model_update<R: Rng + ?Sized>(
    model: &mut DynamicsModel,
    buffer: &ReplayBuffer,
    opt: &mut AdamState,
    lr: f64,
    batch_size: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<ModelUpdateStats> {
    if buffer.is_empty() {
        return Err(EngineError::contract("model_update on empty buffer"));
    }
    let mut stats = ModelUpdateStats {
        last_batch_loss: f64::NAN,
        skipped_steps: 0,
    };
    for _ in 0..n_inner {
        let batch = buffer.sample_minibatch(batch_size, rng)?;
        let (loss, grad) = model.loss_grad(&batch)?;
        stats.last_batch_loss = loss;
        if lr == 0.0 {
            continue;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            stats.skipped_steps += 1;
            continue;
        }
        let (params, next_opt) = adam_update(model.net.params(), &grad, opt, lr)?;
        model.net.set_params(params)?;
        *opt = next_opt;
    }
    Ok(stats)
}

/// Builds a model whose function class contains every affine map: identity
/// activations with pass-through hidden widths.
pub fn linear_capacity_model(
    state_dim: usize,
    action_dim: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<DynamicsModel> {
    let width = state_dim + action_dim;
    let mut model = DynamicsModel::new(
        state_dim,
        action_dim,
        [width, width],
        Activation::Identity,
        TargetMode::Absolute,
        dt,
        rng,
    )?;
    model.freeze_normalization();
    Ok(model)
}
