//! The outer training loop: per episode, sample a reference, roll the
//! policy out on the real plant, extend the buffer, update the model on
//! minibatches from the extended buffer, then assemble the closed-loop
//! gradient with the freshly updated model and take one preconditioned
//! policy step. Payload-schedule events, logging, checkpointing, and
//! best-policy tracking hang off the same loop.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::checkpoint::{checkpoint_load, checkpoint_save};
use crate::config::TrainerConfig;
use crate::diagnostics;
use crate::error::{EngineError, Result};
use crate::gradient::{assemble_jacobians, closed_loop_gradient};
use crate::logging::{EpisodeRecord, LogWriter, TrainingLog};
use crate::model::{model_update, DynamicsModel};
use crate::plants::PlantConfig;
use crate::policy::{Controller, MlpPolicy};
use crate::precond::{policy_update, preconditioner_spectrum};
use crate::reference::{eval_suite, sample_reference, ReferenceTrajectory};
use crate::replay::ReplayBuffer;
use crate::rollout::rollout;
use crate::seed::{self, Stream};

/// Best policy seen so far, by evaluation cost on the fixed suite.
#[derive(Debug, Clone)]
pub struct BestEval {
    pub cost: f64,
    pub policy_params: Vec<f64>,
}

/// Everything that must survive a checkpoint round trip.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub seed: u64,
    /// Next episode to run.
    pub episode: u64,
    pub model: DynamicsModel,
    pub adam: AdamState,
    pub policy: MlpPolicy,
    pub buffer: ReplayBuffer,
    pub best_eval: Option<BestEval>,
}

/// Fresh state from a validated config: seeded model and policy inits,
/// empty buffer.
pub fn init_state(cfg: &TrainerConfig) -> Result<TrainerState> {
    cfg.validate()?;
    let seed_val = cfg.trainer.seed;
    let mut mrng = seed::rng_for(seed_val, Stream::ModelInit);
    let model = DynamicsModel::new(
        cfg.plant.state_dim(),
        cfg.plant.action_dim(),
        cfg.model.hidden,
        crate::nn::Activation::Tanh,
        cfg.model.target,
        cfg.plant.dt,
        &mut mrng,
    )?;
    let mut prng = seed::rng_for(seed_val, Stream::PolicyInit);
    let policy = MlpPolicy::new(
        &cfg.plant,
        cfg.policy.hidden,
        cfg.policy.lookahead,
        cfg.policy.prev_actions,
        cfg.policy.action_scale,
        &mut prng,
    )?;
    let adam = AdamState::new(model.net.n_params());
    let capacity = if cfg.trainer.buffer_capacity == 0 {
        None
    } else {
        Some(cfg.trainer.buffer_capacity)
    };
    Ok(TrainerState {
        seed: seed_val,
        episode: 0,
        model,
        adam,
        policy,
        buffer: ReplayBuffer::new(capacity),
        best_eval: None,
    })
}

/// Restores a checkpoint and checks it is compatible with the config.
pub fn resume_state(cfg: &TrainerConfig, checkpoint: &Path) -> Result<TrainerState> {
    cfg.validate()?;
    let state = checkpoint_load(checkpoint)?;
    if state.model.state_dim() != cfg.plant.state_dim()
        || state.policy.action_dim != cfg.plant.action_dim()
    {
        return Err(EngineError::config(
            "checkpoint dimensions do not match the configured plant",
        ));
    }
    Ok(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub episodes: u64,
    pub faulted_episodes: u64,
    pub final_g: f64,
    pub final_probe_loss: Option<f64>,
    pub wall_time_s: f64,
    pub log_path: String,
    pub final_checkpoint: String,
    pub best_eval_cost: Option<f64>,
}

/// Runs episodes `state.episode..cfg.trainer.episodes`, writing the JSONL
/// log, periodic checkpoints, and a final checkpoint + summary under the
/// config's output directory. `observer` sees each record as it is logged.
pub fn run_training(
    cfg: &TrainerConfig,
    state: &mut TrainerState,
    mut observer: Option<&mut dyn FnMut(&EpisodeRecord)>,
) -> Result<(TrainingLog, TrainSummary)> {
    cfg.validate()?;
    let t_start = Instant::now();
    let horizon = cfg.horizon();
    let seed_val = state.seed;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let mut log = TrainingLog::new(seed_val);
    let mut writer = LogWriter::create(&cfg.log_path(), &log.meta)?;
    let mut faulted_episodes = 0u64;

    for e in state.episode..cfg.trainer.episodes {
        let t0 = Instant::now();
        let plant = cfg.plant_at_episode(e)?;

        let mut ref_rng = seed::rng_for_episode(seed_val, Stream::Reference, e);
        let reference =
            sample_reference(&plant, horizon, cfg.trainer.steps_per_trajectory, &mut ref_rng)?;
        let mut noise_rng = seed::rng_for_episode(seed_val, Stream::ProcessNoise, e);
        let record = rollout(&state.policy, &plant, &reference, Some(&mut noise_rng))?;
        let faulted = !record.valid;
        if faulted {
            faulted_episodes += 1;
        }

        // Extend the buffer with whatever the rollout produced (a fault
        // truncates, never pads).
        let transitions: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..record.actions.len())
            .map(|tau| {
                (
                    record.states[tau].clone(),
                    record.actions[tau].clone(),
                    record.states[tau + 1].clone(),
                )
            })
            .collect();
        if !transitions.is_empty() {
            state.buffer.push_episode(e, transitions);
        }

        if cfg.model.normalize_freeze_episodes > 0 && !state.model.norm.frozen {
            state.model.update_normalization(&state.buffer);
            if e + 1 >= cfg.model.normalize_freeze_episodes {
                state.model.freeze_normalization();
            }
        }

        // Model update on the buffer including this episode.
        if !state.buffer.is_empty() {
            let mut batch_rng = seed::rng_for_episode(seed_val, Stream::Minibatch, e);
            model_update(
                &mut state.model,
                &state.buffer,
                &mut state.adam,
                cfg.model.lr,
                cfg.model.batch_size,
                cfg.model.inner_steps,
                &mut batch_rng,
            )?;
        }

        // Probe loss: the updated model on this episode's own transitions,
        // the distribution the policy gradient consumes.
        let probe_loss = {
            let eps_t = state.buffer.episode_transitions(e);
            if eps_t.is_empty() {
                None
            } else {
                Some(state.model.loss(&eps_t)?)
            }
        };

        let mut grad_norm = None;
        let mut lambda_min = None;
        let mut lambda_max = None;
        let mut delta_t = None;
        if !faulted {
            let bundle = assemble_jacobians(
                &state.model,
                &state.policy,
                &plant,
                &record,
                cfg.policy.gamma_discount,
            )?;
            let grad = closed_loop_gradient(&bundle)?;
            grad_norm = Some(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
            let (lmin, lmax) = preconditioner_spectrum(
                &bundle.du_dphi,
                &grad,
                cfg.policy.alpha,
                cfg.policy.epsilon,
            )?;
            lambda_min = Some(lmin);
            lambda_max = Some(lmax);

            let cadence = cfg.diagnostics.delta_oracle_every;
            if cadence > 0 && e % cadence == 0 {
                let oracle = diagnostics::fd_policy_gradient(
                    &plant,
                    &state.policy,
                    &reference,
                    cfg.diagnostics.fd_step,
                    cfg.diagnostics.fd_param_cap,
                )?;
                let err = diagnostics::gradient_error(&grad, &oracle)?;
                delta_t = Some(err.norm);
            }

            let eta_t = cfg.policy.eta_schedule.rate(cfg.policy.eta, e);
            if eta_t > 0.0 {
                match policy_update(
                    &mut state.policy,
                    &grad,
                    &bundle.du_dphi,
                    eta_t,
                    cfg.policy.alpha,
                    cfg.policy.epsilon,
                    cfg.policy.param_clip,
                ) {
                    Ok(()) => {}
                    // A non-finite update is skipped; the policy is untouched.
                    Err(EngineError::Numeric(_)) => faulted_episodes += 1,
                    Err(other) => return Err(other),
                }
            }
        }

        let drift_proxy = if e > 0 {
            let cur = state.buffer.episode_transitions(e);
            let prev = state.buffer.episode_transitions(e - 1);
            if cur.is_empty() || prev.is_empty() {
                None
            } else {
                Some(diagnostics::drift_proxy_capped(
                    &cur,
                    &prev,
                    cfg.diagnostics.drift_subsample,
                )?)
            }
        } else {
            None
        };

        let rec = EpisodeRecord {
            episode: e,
            g_t: record.episode_cost,
            probe_loss,
            grad_norm,
            lambda_min,
            lambda_max,
            drift_proxy,
            delta_t,
            payload: plant.payload(),
            faulted,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        writer.append(&rec)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs(&rec);
        }
        log.records.push(rec);
        state.episode = e + 1;

        if cfg.trainer.eval_every > 0 && (e + 1) % cfg.trainer.eval_every == 0 {
            let metrics = evaluate_policy_on_suite(cfg, &plant, &state.policy)?;
            let better = state
                .best_eval
                .as_ref()
                .is_none_or(|b| metrics.mean_episode_cost < b.cost);
            if better {
                state.best_eval = Some(BestEval {
                    cost: metrics.mean_episode_cost,
                    policy_params: state.policy.net.params().to_vec(),
                });
                checkpoint_save(state, &cfg.best_checkpoint_path())?;
            }
        }

        if cfg.trainer.checkpoint_every > 0 && (e + 1) % cfg.trainer.checkpoint_every == 0 {
            checkpoint_save(state, &cfg.checkpoint_path(e + 1))?;
        }
    }

    checkpoint_save(state, &cfg.final_checkpoint_path())?;
    let summary = TrainSummary {
        seed: seed_val,
        episodes: state.episode,
        faulted_episodes,
        final_g: log.records.last().map_or(f64::NAN, |r| r.g_t),
        final_probe_loss: log.records.last().and_then(|r| r.probe_loss),
        wall_time_s: t_start.elapsed().as_secs_f64(),
        log_path: cfg.log_path().display().to_string(),
        final_checkpoint: cfg.final_checkpoint_path().display().to_string(),
        best_eval_cost: state.best_eval.as_ref().map(|b| b.cost),
    };
    std::fs::write(
        cfg.summary_path(),
        serde_json::to_string_pretty(&summary).map_err(|e| EngineError::Log(e.to_string()))?,
    )?;
    Ok((log, summary))
}

/// Tracking metrics over a fixed reference suite. ρ is the normalized
/// indicator max-error / max-velocity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_tracking_error: f64,
    pub max_tracking_error: f64,
    pub mean_velocity: f64,
    pub max_velocity: f64,
    pub rho: f64,
    pub mean_episode_cost: f64,
}

/// Evaluates a controller on a reference suite. No learning occurs; process
/// noise is disabled so results are reproducible.
pub fn evaluate(
    controller: &dyn Controller,
    plant: &PlantConfig,
    suite: &[ReferenceTrajectory],
) -> Result<EvalMetrics> {
    if suite.is_empty() {
        return Err(EngineError::contract("empty evaluation suite"));
    }
    let mut quiet = plant.clone();
    quiet.noise_sigma = 0.0;
    let mut err_sum = 0.0;
    let mut err_max: f64 = 0.0;
    let mut err_count = 0usize;
    let mut vel_sum = 0.0;
    let mut vel_max: f64 = 0.0;
    let mut vel_count = 0usize;
    let mut cost_sum = 0.0;
    for reference in suite {
        let rec = rollout::<rand_chacha::ChaCha12Rng>(controller, &quiet, reference, None)?;
        if !rec.valid {
            return Err(EngineError::numeric("evaluation rollout faulted"));
        }
        cost_sum += rec.episode_cost;
        let tracked: Vec<Vec<f64>> = rec.states.iter().map(|x| quiet.tracked(x)).collect();
        for tau in 0..rec.horizon() {
            let e: f64 = tracked[tau]
                .iter()
                .zip(reference.point(tau))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            err_sum += e;
            err_max = err_max.max(e);
            err_count += 1;
            let v: f64 = tracked[tau + 1]
                .iter()
                .zip(&tracked[tau])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / quiet.dt;
            vel_sum += v;
            vel_max = vel_max.max(v);
            vel_count += 1;
        }
    }
    Ok(EvalMetrics {
        mean_tracking_error: err_sum / err_count as f64,
        max_tracking_error: err_max,
        mean_velocity: vel_sum / vel_count as f64,
        max_velocity: vel_max,
        rho: err_max / vel_max,
        mean_episode_cost: cost_sum / suite.len() as f64,
    })
}

/// Evaluates the current policy on the standard suite for this config.
pub fn evaluate_policy_on_suite(
    cfg: &TrainerConfig,
    plant: &PlantConfig,
    policy: &MlpPolicy,
) -> Result<EvalMetrics> {
    let suite = eval_suite(
        plant,
        cfg.horizon(),
        cfg.trainer.steps_per_trajectory,
        cfg.trainer.seed,
    )?;
    evaluate(policy, plant, &suite)
}
