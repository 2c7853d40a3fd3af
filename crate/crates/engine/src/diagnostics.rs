//! Measured realizations of the theory's quantities: the gradient-error gap
//! δ_t against a finite-difference oracle, policy and model regret against
//! explicit comparators, and an energy-distance proxy for episode-to-episode
//! data drift.
//!
//! Every diagnostic here is read-only with respect to training state; oracle
//! rollouts rebuild references from the seed recorded in the log.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::config::TrainerConfig;
use crate::error::{check_len, EngineError, Result};
use crate::logging::TrainingLog;
use crate::model::{model_update, DynamicsModel};
use crate::nn::MlpNet;
use crate::policy::{Controller, MlpPolicy};
use crate::precond;
use crate::reference::{sample_reference, ReferenceTrajectory};
use crate::replay::{ReplayBuffer, Transition};
use crate::rollout::episode_cost;
use crate::seed::{self, Stream};

pub use crate::precond::preconditioner_spectrum;

/// True policy gradient by central finite differences of episode cost over
/// every parameter. Expensive by construction: refuses policies above the
/// parameter cap, and requires a noise-free plant so the cost is
/// deterministic.
pub fn fd_policy_gradient(
    plant: &crate::plants::PlantConfig,
    policy: &MlpPolicy,
    reference: &ReferenceTrajectory,
    h_fd: f64,
    param_cap: usize,
) -> Result<Vec<f64>> {
    if plant.noise_sigma > 0.0 {
        return Err(EngineError::contract(
            "finite-difference oracle requires a noise-free plant",
        ));
    }
    let n_phi = policy.n_params();
    if n_phi > param_cap {
        return Err(EngineError::contract(format!(
            "finite-difference oracle refused: {n_phi} params exceed cap {param_cap}"
        )));
    }
    if h_fd <= 0.0 {
        return Err(EngineError::contract("fd step must be positive"));
    }
    let base = policy.net.params().to_vec();
    let mut probe = policy.clone();
    let mut grad = vec![0.0; n_phi];
    for i in 0..n_phi {
        let mut p = base.clone();
        p[i] += h_fd;
        probe.net.set_params(p)?;
        let c_plus = episode_cost::<ChaCha12Rng>(&probe, plant, reference, None)?;
        let mut p = base.clone();
        p[i] -= h_fd;
        probe.net.set_params(p)?;
        let c_minus = episode_cost::<ChaCha12Rng>(&probe, plant, reference, None)?;
        grad[i] = (c_plus - c_minus) / (2.0 * h_fd);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GradientError {
    /// ‖est − oracle‖.
    pub norm: f64,
    /// ‖est − oracle‖ / ‖oracle‖.
    pub rel_error: f64,
    pub cosine: f64,
}

pub fn gradient_error(est: &[f64], oracle: &[f64]) -> Result<GradientError> {
    check_len("oracle", oracle.len(), est.len())?;
    let diff: f64 = est
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let ne: f64 = est.iter().map(|v| v * v).sum::<f64>().sqrt();
    let no: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = est.iter().zip(oracle).map(|(a, b)| a * b).sum();
    let cosine = if ne == 0.0 && no == 0.0 {
        1.0
    } else if ne == 0.0 || no == 0.0 {
        0.0
    } else {
        dot / (ne * no)
    };
    Ok(GradientError {
        norm: diff,
        rel_error: diff / no.max(1e-300),
        cosine,
    })
}

/// Instantaneous and cumulative regret against a comparator, with a log-log
/// slope fit of the cumulative series over a post-burn-in window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretReport {
    pub episodes: Vec<u64>,
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Least-squares slope of log cumulative regret vs log (episode+1).
    pub slope: Option<f64>,
    /// Episode window (inclusive) the slope was fitted over.
    pub fit_window: [u64; 2],
    pub comparator: String,
}

/// Least-squares slope of ln(y) on ln(x) over points with positive y.
fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Policy regret: per episode, g_t from the log minus the comparator's cost
/// on the same reference, replayed from the seed stored in the log. Faulted
/// episodes are skipped.
pub fn policy_regret(
    log: &TrainingLog,
    cfg: &TrainerConfig,
    comparator: &dyn Controller,
    comparator_desc: &str,
    fit_window: [u64; 2],
) -> Result<RegretReport> {
    if log.records.is_empty() {
        return Err(EngineError::Log("empty training log".into()));
    }
    let seed_val = log.meta.seed;
    let horizon = cfg.horizon();
    let mut episodes = Vec::new();
    let mut instantaneous = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for rec in &log.records {
        if rec.faulted {
            continue;
        }
        let plant = cfg.plant_at_episode(rec.episode)?;
        let mut ref_rng = seed::rng_for_episode(seed_val, Stream::Reference, rec.episode);
        let reference =
            sample_reference(&plant, horizon, cfg.trainer.steps_per_trajectory, &mut ref_rng)?;
        let mut noise_rng = seed::rng_for_episode(seed_val, Stream::ProcessNoise, rec.episode);
        let comp_cost = episode_cost(comparator, &plant, &reference, Some(&mut noise_rng))?;
        let inst = rec.g_t - comp_cost;
        acc += inst;
        episodes.push(rec.episode);
        instantaneous.push(inst);
        cumulative.push(acc);
    }
    let points: Vec<(f64, f64)> = episodes
        .iter()
        .zip(&cumulative)
        .filter(|(e, _)| **e + 1 >= fit_window[0] && **e + 1 <= fit_window[1])
        .map(|(e, c)| ((*e + 1) as f64, *c))
        .collect();
    Ok(RegretReport {
        episodes,
        instantaneous,
        cumulative,
        slope: loglog_slope(&points),
        fit_window,
        comparator: comparator_desc.to_string(),
    })
}

/// Model regret: for every `cadence`-th episode with recoverable data, train
/// a fresh comparator network to convergence on that episode's transitions
/// only, and report the logged probe loss minus the comparator's loss. The
/// comparator approximates the per-episode optimum; the report is therefore
/// a lower bound on the true regret.
pub fn model_regret(
    log: &TrainingLog,
    buffer: &ReplayBuffer,
    template: &DynamicsModel,
    retrain_budget: usize,
    cadence: u64,
    fit_window: [u64; 2],
) -> Result<RegretReport> {
    if cadence == 0 {
        return Err(EngineError::contract("cadence must be >= 1"));
    }
    let seed_val = log.meta.seed;
    let mut episodes = Vec::new();
    let mut instantaneous = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for rec in &log.records {
        if rec.episode % cadence != 0 {
            continue;
        }
        let Some(probe) = rec.probe_loss else {
            continue;
        };
        let data = buffer.episode_transitions(rec.episode);
        if data.len() < 2 {
            // Insufficient per-episode data; skip with a flag (absent entry).
            continue;
        }
        let comp_loss = retrained_comparator_loss(template, &data, retrain_budget, seed_val, rec.episode)?;
        let inst = probe - comp_loss;
        acc += inst;
        episodes.push(rec.episode);
        instantaneous.push(inst);
        cumulative.push(acc);
    }
    let points: Vec<(f64, f64)> = episodes
        .iter()
        .zip(&cumulative)
        .filter(|(e, _)| **e + 1 >= fit_window[0] && **e + 1 <= fit_window[1])
        .map(|(e, c)| ((*e + 1) as f64, *c))
        .collect();
    Ok(RegretReport {
        episodes,
        instantaneous,
        cumulative,
        slope: loglog_slope(&points),
        fit_window,
        comparator: format!("fresh network retrained {retrain_budget} steps per episode"),
    })
}

/// Best loss reached by a fresh network of the template's architecture,
/// trained on one episode's transitions alone.
fn retrained_comparator_loss(
    template: &DynamicsModel,
    data: &[&Transition],
    retrain_budget: usize,
    seed_val: u64,
    episode: u64,
) -> Result<f64> {
    let mut rng = seed::rng_for_episode(seed_val, Stream::Diagnostics, episode);
    let mut comp = template.clone();
    comp.net = MlpNet::init_random(template.net.layer_dims, template.net.activation, &mut rng)?;
    let mut opt = AdamState::new(comp.net.n_params());
    // Single-episode dataset: full-batch Adam, track the best loss seen.
    let mut scratch = ReplayBuffer::new(None);
    scratch.push_episode(
        episode,
        data.iter()
            .map(|t| (t.x.clone(), t.u.clone(), t.x_next.clone()))
            .collect(),
    );
    let full: Vec<&Transition> = scratch.transitions().iter().collect();
    let mut best = comp.loss(&full)?;
    let chunk = 50;
    let mut done = 0;
    while done < retrain_budget {
        let n = chunk.min(retrain_budget - done);
        model_update(&mut comp, &scratch, &mut opt, 1e-2, full.len(), n, &mut rng)?;
        best = best.min(comp.loss(&full)?);
        done += n;
    }
    Ok(best)
}

/// Energy distance between two empirical (x, u, x⁺) samples after pooled
/// per-dimension standardization. Zero on identical samples, symmetric,
/// and grows with distributional separation. A declared proxy for the
/// total-variation drift, which is not estimable from samples.
pub fn drift_proxy(a: &[&Transition], b: &[&Transition]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(EngineError::contract("drift proxy needs non-empty samples"));
    }
    let embed = |t: &Transition| -> Vec<f64> {
        t.x.iter().chain(&t.u).chain(&t.x_next).copied().collect()
    };
    let xa: Vec<Vec<f64>> = a.iter().map(|t| embed(t)).collect();
    let xb: Vec<Vec<f64>> = b.iter().map(|t| embed(t)).collect();
    let d = xa[0].len();
    let total = (xa.len() + xb.len()) as f64;
    let mut mean = vec![0.0; d];
    for row in xa.iter().chain(&xb) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / total;
        }
    }
    let mut var = vec![0.0; d];
    for row in xa.iter().chain(&xb) {
        for k in 0..d {
            let dv = row[k] - mean[k];
            var[k] += dv * dv / total;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
    let norm = |p: &[f64], q: &[f64]| -> f64 {
        (0..d)
            .map(|k| {
                let dv = (p[k] - q[k]) / std[k];
                dv * dv
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut cross = 0.0;
    for p in &xa {
        for q in &xb {
            cross += norm(p, q);
        }
    }
    cross *= 2.0 / (xa.len() * xb.len()) as f64;
    let mut within_a = 0.0;
    for p in &xa {
        for q in &xa {
            within_a += norm(p, q);
        }
    }
    within_a /= (xa.len() * xa.len()) as f64;
    let mut within_b = 0.0;
    for p in &xb {
        for q in &xb {
            within_b += norm(p, q);
        }
    }
    within_b /= (xb.len() * xb.len()) as f64;
    Ok(cross - within_a - within_b)
}

/// Drift proxy with a deterministic evenly-spaced subsample cap, used for
/// the per-episode log where the full quadratic cost would dominate.
pub fn drift_proxy_capped<'a>(
    a: &[&'a Transition],
    b: &[&'a Transition],
    cap: usize,
) -> Result<f64> {
    fn thin<'a>(s: &[&'a Transition], cap: usize) -> Vec<&'a Transition> {
        if cap == 0 || s.len() <= cap {
            s.to_vec()
        } else {
            (0..cap).map(|i| s[i * s.len() / cap]).collect()
        }
    }
    drift_proxy(&thin(a, cap), &thin(b, cap))
}

/// Relative error and cosine between the assembled closed-loop gradient and
/// the finite-difference oracle for one seeded scenario; the `grad-check`
/// entry point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub delta_norm: f64,
    pub rel_error: f64,
    pub cosine: f64,
    pub grad_norm: f64,
    pub n_params: usize,
}

impl From<(GradientError, f64, usize)> for GradCheckReport {
    fn from((e, grad_norm, n_params): (GradientError, f64, usize)) -> Self {
        Self {
            delta_norm: e.norm,
            rel_error: e.rel_error,
            cosine: e.cosine,
            grad_norm,
            n_params,
        }
    }
}

/// Runs one gradient check: rolls the policy out, assembles the closed-loop
/// gradient from the given linearization, and compares against the
/// finite-difference oracle on the true closed loop. `corrupt_k` negates the
/// policy feedback blocks, the deliberate convention-breaking negative
/// control.
pub fn grad_check(
    plant: &crate::plants::PlantConfig,
    policy: &MlpPolicy,
    lin: &dyn crate::gradient::Linearization,
    reference: &ReferenceTrajectory,
    gamma_discount: f64,
    fd_step: f64,
    param_cap: usize,
    corrupt_k: bool,
) -> Result<GradCheckReport> {
    let record = crate::rollout::rollout::<ChaCha12Rng>(policy, plant, reference, None)?;
    if !record.valid {
        return Err(EngineError::numeric("grad-check rollout faulted"));
    }
    let mut bundle =
        crate::gradient::assemble_jacobians(lin, policy, plant, &record, gamma_discount)?;
    if corrupt_k {
        for k in &mut bundle.k_blocks {
            *k = -k.clone();
        }
    }
    let est = crate::gradient::closed_loop_gradient(&bundle)?;
    let oracle = fd_policy_gradient(plant, policy, reference, fd_step, param_cap)?;
    let err = gradient_error(&est, &oracle)?;
    let grad_norm = est.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(GradCheckReport::from((err, grad_norm, policy.n_params())))
}

/// Λ spectrum bounds for logging; re-exported from the preconditioner.
pub fn spectrum_bounds(
    du_dphi: &nalgebra::DMatrix<f64>,
    grad: &[f64],
    alpha: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    precond::preconditioner_spectrum(du_dphi, grad, alpha, epsilon)
}
