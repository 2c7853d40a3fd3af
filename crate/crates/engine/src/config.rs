//! Run configuration: one structured TOML file with nested sections.
//! Unknown keys are rejected so typos fail loudly before any side effect.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::model::TargetMode;
use crate::plants::PlantConfig;
use crate::precond::EtaSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    /// Total episodes T.
    pub episodes: u64,
    /// Steps per reference-spline segment.
    pub steps_per_trajectory: usize,
    /// Trajectories chained per episode; the horizon is the product.
    #[serde(default = "default_trajectories")]
    pub trajectories_per_episode: usize,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint cadence in episodes (0 = only the final checkpoint).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Evaluation cadence for best-policy tracking (0 = off).
    #[serde(default)]
    pub eval_every: u64,
    /// Replay-buffer capacity in transitions (0 = unbounded).
    #[serde(default)]
    pub buffer_capacity: usize,
}

fn default_trajectories() -> usize {
    10
}

fn default_checkpoint_every() -> u64 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    /// Adam learning rate α_θ (0 freezes the model).
    #[serde(default = "default_model_lr")]
    pub lr: f64,
    /// Inner gradient steps per episode.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_target_mode")]
    pub target: TargetMode,
    /// Episodes during which normalization statistics refresh from the
    /// buffer before freezing (0 disables normalization).
    #[serde(default = "default_norm_freeze")]
    pub normalize_freeze_episodes: u64,
}

fn default_hidden() -> [usize; 2] {
    [64, 64]
}

fn default_model_lr() -> f64 {
    1e-3
}

fn default_inner_steps() -> usize {
    64
}

fn default_batch_size() -> usize {
    256
}

fn default_target_mode() -> TargetMode {
    TargetMode::Delta
}

fn default_norm_freeze() -> u64 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    /// Policy learning rate η (0 freezes the policy: the regret negative
    /// control).
    pub eta: f64,
    #[serde(default = "default_eta_schedule")]
    pub eta_schedule: EtaSchedule,
    /// Action-sensitivity weight α in the preconditioner.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Identity shift ε in the preconditioner (must be positive).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Discount γ on the A + B·K term; 1 is exact.
    #[serde(default = "default_gamma")]
    pub gamma_discount: f64,
    /// Lookahead window length L (reference points).
    #[serde(default = "default_lookahead")]
    pub lookahead: usize,
    /// Previous-command window length P.
    #[serde(default = "default_prev_actions")]
    pub prev_actions: usize,
    /// Output scale applied to the network's action.
    #[serde(default = "default_action_scale")]
    pub action_scale: f64,
    /// Optional parameter box: φ is clipped into [-clip, clip].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_clip: Option<f64>,
}

fn default_eta_schedule() -> EtaSchedule {
    EtaSchedule::Constant
}

fn default_alpha() -> f64 {
    1e-3
}

fn default_epsilon() -> f64 {
    1e-4
}

fn default_gamma() -> f64 {
    1.0
}

fn default_lookahead() -> usize {
    10
}

fn default_prev_actions() -> usize {
    2
}

fn default_action_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Gradient-oracle cadence in episodes (0 = off). Requires a noise-free
    /// plant and a policy within the finite-difference parameter cap.
    #[serde(default)]
    pub delta_oracle_every: u64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Refuse finite-difference oracles above this parameter count.
    #[serde(default = "default_fd_cap")]
    pub fd_param_cap: usize,
    /// Per-set sample cap for the in-training drift proxy.
    #[serde(default = "default_drift_subsample")]
    pub drift_subsample: usize,
}

fn default_fd_step() -> f64 {
    1e-6
}

fn default_fd_cap() -> usize {
    2000
}

fn default_drift_subsample() -> usize {
    512
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            delta_oracle_every: 0,
            fd_step: default_fd_step(),
            fd_param_cap: default_fd_cap(),
            drift_subsample: default_drift_subsample(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadEvent {
    pub episode: u64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub plant: PlantConfig,
    pub trainer: TrainerSection,
    pub model: ModelSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
    #[serde(default)]
    pub payload_schedule: Vec<PayloadEvent>,
}

impl TrainerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainerConfig =
            toml::from_str(text).map_err(|e| EngineError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EngineError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Episode horizon H.
    pub fn horizon(&self) -> usize {
        self.trainer.steps_per_trajectory * self.trainer.trajectories_per_episode
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        let t = &self.trainer;
        if t.episodes == 0 {
            return Err(EngineError::config("trainer.episodes must be >= 1"));
        }
        if t.steps_per_trajectory == 0 || t.trajectories_per_episode == 0 {
            return Err(EngineError::config("horizon components must be >= 1"));
        }
        if self.model.lr < 0.0 || self.policy.eta < 0.0 {
            return Err(EngineError::config("learning rates must be >= 0"));
        }
        if self.model.inner_steps == 0 || self.model.batch_size == 0 {
            return Err(EngineError::config("model.inner_steps and batch_size must be >= 1"));
        }
        if self.model.hidden.contains(&0) || self.policy.hidden.contains(&0) {
            return Err(EngineError::config("hidden widths must be >= 1"));
        }
        if self.policy.epsilon <= 0.0 {
            return Err(EngineError::config("policy.epsilon must be positive"));
        }
        if self.policy.alpha < 0.0 {
            return Err(EngineError::config("policy.alpha must be >= 0"));
        }
        if !(self.policy.gamma_discount > 0.0 && self.policy.gamma_discount <= 1.0) {
            return Err(EngineError::config("policy.gamma_discount must be in (0, 1]"));
        }
        if self.policy.lookahead == 0 {
            return Err(EngineError::config("policy.lookahead must be >= 1"));
        }
        if self.policy.action_scale <= 0.0 {
            return Err(EngineError::config("policy.action_scale must be positive"));
        }
        let mut prev: Option<u64> = None;
        for ev in &self.payload_schedule {
            if ev.mass < 0.0 {
                return Err(EngineError::config("payload mass must be >= 0"));
            }
            if let Some(p) = prev {
                if ev.episode <= p {
                    return Err(EngineError::config(
                        "payload_schedule episodes must be strictly increasing",
                    ));
                }
            }
            prev = Some(ev.episode);
        }
        if self.diagnostics.delta_oracle_every > 0 {
            if self.plant.noise_sigma > 0.0 {
                return Err(EngineError::config(
                    "gradient oracle requires a noise-free plant",
                ));
            }
            let n_phi = policy_param_count(self);
            if n_phi > self.diagnostics.fd_param_cap {
                return Err(EngineError::config(format!(
                    "gradient oracle refused: policy has {n_phi} params, cap is {}",
                    self.diagnostics.fd_param_cap
                )));
            }
        }
        if self.diagnostics.fd_step <= 0.0 {
            return Err(EngineError::config("diagnostics.fd_step must be positive"));
        }
        Ok(())
    }

    /// Plant with every payload event at or before `episode` applied.
    pub fn plant_at_episode(&self, episode: u64) -> Result<PlantConfig> {
        let mut plant = self.plant.clone();
        for ev in &self.payload_schedule {
            if ev.episode <= episode {
                plant = plant.set_payload(ev.mass)?;
            }
        }
        Ok(plant)
    }

    pub fn log_path(&self) -> PathBuf {
        self.output.dir.join("train_log.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.output.dir.join("summary.json")
    }

    pub fn checkpoint_path(&self, episode: u64) -> PathBuf {
        self.output.dir.join(format!("ckpt_ep{episode:05}.bin"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.output.dir.join("ckpt_final.bin")
    }

    pub fn best_checkpoint_path(&self) -> PathBuf {
        self.output.dir.join("ckpt_best.bin")
    }
}

/// Parameter count the configured policy will have (before building it).
pub fn policy_param_count(cfg: &TrainerConfig) -> usize {
    let n = cfg.plant.state_dim();
    let m = cfg.plant.action_dim();
    let input = n + cfg.policy.lookahead * cfg.plant.ref_dim() + cfg.policy.prev_actions * m;
    crate::nn::param_count([input, cfg.policy.hidden[0], cfg.policy.hidden[1], m])
}
