//! Checkpoint format: a single little-endian binary file.
//!
//! Layout (all integers little-endian, `vec` = u64 length + that many f64):
//!
//! ```text
//! magic        8 bytes  "OMBRLCP\x01"
//! version      u32      currently 1
//! seed         u64      master seed
//! episode      u64      next episode to run
//! -- model --
//! target mode  u8       0 = delta, 1 = absolute
//! activation   u8       0 = tanh, 1 = relu, 2 = identity
//! dt           f64
//! layer dims   4 x u64
//! params       vec
//! norm mean_in / std_in / mean_out / std_out   4 x vec
//! norm frozen  u8
//! -- model optimizer --
//! beta1, beta2, eps_adam   3 x f64
//! step_count   u64
//! first/second moments     2 x vec
//! -- policy --
//! activation   u8
//! layer dims   4 x u64
//! lookahead, prev_actions, state_dim, ref_dim, action_dim   5 x u64
//! state_scale, ref_scale   2 x vec
//! action_scale f64
//! params       vec
//! -- buffer --
//! capacity     u64      u64::MAX = unbounded
//! count        u64
//! state_dim, action_dim   2 x u64
//! per transition: episode u64, x (state_dim f64), u (action_dim f64),
//!                 x_next (state_dim f64)
//! -- best policy by evaluation cost --
//! present      u8
//! if present: cost f64, params vec
//! ```
//!
//! Loads fail atomically: a truncated or version-mismatched file returns an
//! error and no state is constructed.

use std::path::Path;

use crate::adam::AdamState;
use crate::error::{EngineError, Result};
use crate::model::{DynamicsModel, Normalizer, TargetMode};
use crate::nn::{Activation, MlpNet};
use crate::policy::MlpPolicy;
use crate::replay::ReplayBuffer;
use crate::trainer::{BestEval, TrainerState};

const MAGIC: &[u8; 8] = b"OMBRLCP\x01";
const VERSION: u32 = 1;

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(EngineError::Checkpoint {
                path: Default::default(),
                reason: format!("truncated at byte {} (need {n} more)", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Identity => 2,
    }
}

fn activation_from(tag: u8) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        2 => Activation::Identity,
        t => {
            return Err(EngineError::Checkpoint {
                path: Default::default(),
                reason: format!("unknown activation tag {t}"),
            })
        }
    })
}

fn encode(state: &TrainerState) -> Vec<u8> {
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(state.seed);
    w.u64(state.episode);

    let m = &state.model;
    w.u8(match m.mode {
        TargetMode::Delta => 0,
        TargetMode::Absolute => 1,
    });
    w.u8(activation_tag(m.net.activation));
    w.f64(m.dt);
    for d in m.net.layer_dims {
        w.u64(d as u64);
    }
    w.vec(m.net.params());
    w.vec(&m.norm.mean_in);
    w.vec(&m.norm.std_in);
    w.vec(&m.norm.mean_out);
    w.vec(&m.norm.std_out);
    w.u8(m.norm.frozen as u8);

    let a = &state.adam;
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps_adam);
    w.u64(a.step_count);
    w.vec(&a.first_moment);
    w.vec(&a.second_moment);

    let p = &state.policy;
    w.u8(activation_tag(p.net.activation));
    for d in p.net.layer_dims {
        w.u64(d as u64);
    }
    w.u64(p.lookahead as u64);
    w.u64(p.prev_actions as u64);
    w.u64(p.state_dim as u64);
    w.u64(p.ref_dim as u64);
    w.u64(p.action_dim as u64);
    w.vec(&p.state_scale);
    w.vec(&p.ref_scale);
    w.f64(p.action_scale);
    w.vec(p.net.params());

    let b = &state.buffer;
    w.u64(b.capacity.map_or(u64::MAX, |c| c as u64));
    w.u64(b.len() as u64);
    w.u64(p.state_dim as u64);
    w.u64(p.action_dim as u64);
    for t in b.transitions() {
        w.u64(t.episode_index);
        for v in t.x.iter().chain(&t.u).chain(&t.x_next) {
            w.f64(*v);
        }
    }

    match &state.best_eval {
        Some(best) => {
            w.u8(1);
            w.f64(best.cost);
            w.vec(&best.policy_params);
        }
        None => w.u8(0),
    }
    w.0
}

fn decode(buf: &[u8]) -> Result<TrainerState> {
    let mut r = ByteReader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(EngineError::Checkpoint {
            path: Default::default(),
            reason: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(EngineError::Checkpoint {
            path: Default::default(),
            reason: format!("unsupported version {version}"),
        });
    }
    let seed = r.u64()?;
    let episode = r.u64()?;

    let mode = match r.u8()? {
        0 => TargetMode::Delta,
        1 => TargetMode::Absolute,
        t => {
            return Err(EngineError::Checkpoint {
                path: Default::default(),
                reason: format!("unknown target mode {t}"),
            })
        }
    };
    let activation = activation_from(r.u8()?)?;
    let dt = r.f64()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let params = r.vec()?;
    let norm = Normalizer {
        mean_in: r.vec()?,
        std_in: r.vec()?,
        mean_out: r.vec()?,
        std_out: r.vec()?,
        frozen: r.u8()? != 0,
    };
    let mut net = MlpNet::zeros(dims, activation).map_err(|e| EngineError::Checkpoint {
        path: Default::default(),
        reason: e.to_string(),
    })?;
    net.set_params(params).map_err(|e| EngineError::Checkpoint {
        path: Default::default(),
        reason: format!("model params: {e}"),
    })?;
    let model = DynamicsModel {
        net,
        mode,
        dt,
        norm,
    };

    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps_adam = r.f64()?;
    let step_count = r.u64()?;
    let adam = AdamState {
        first_moment: r.vec()?,
        second_moment: r.vec()?,
        step_count,
        beta1,
        beta2,
        eps_adam,
    };

    let p_act = activation_from(r.u8()?)?;
    let mut p_dims = [0usize; 4];
    for d in &mut p_dims {
        *d = r.u64()? as usize;
    }
    let lookahead = r.u64()? as usize;
    let prev_actions = r.u64()? as usize;
    let state_dim = r.u64()? as usize;
    let ref_dim = r.u64()? as usize;
    let action_dim = r.u64()? as usize;
    let state_scale = r.vec()?;
    let ref_scale = r.vec()?;
    let action_scale = r.f64()?;
    let p_params = r.vec()?;
    let mut p_net = MlpNet::zeros(p_dims, p_act).map_err(|e| EngineError::Checkpoint {
        path: Default::default(),
        reason: e.to_string(),
    })?;
    p_net.set_params(p_params).map_err(|e| EngineError::Checkpoint {
        path: Default::default(),
        reason: format!("policy params: {e}"),
    })?;
    let policy = MlpPolicy {
        net: p_net,
        lookahead,
        prev_actions,
        state_dim,
        ref_dim,
        action_dim,
        state_scale,
        ref_scale,
        action_scale,
    };

    let cap = r.u64()?;
    let capacity = if cap == u64::MAX {
        None
    } else {
        Some(cap as usize)
    };
    let count = r.u64()? as usize;
    let b_state_dim = r.u64()? as usize;
    let b_action_dim = r.u64()? as usize;
    let mut buffer = ReplayBuffer::new(capacity);
    let mut current_ep: Option<u64> = None;
    let mut pending: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for _ in 0..count {
        let ep = r.u64()?;
        let mut x = Vec::with_capacity(b_state_dim);
        for _ in 0..b_state_dim {
            x.push(r.f64()?);
        }
        let mut u = Vec::with_capacity(b_action_dim);
        for _ in 0..b_action_dim {
            u.push(r.f64()?);
        }
        let mut xn = Vec::with_capacity(b_state_dim);
        for _ in 0..b_state_dim {
            xn.push(r.f64()?);
        }
        if current_ep != Some(ep) {
            if let Some(prev) = current_ep {
                buffer.push_episode(prev, std::mem::take(&mut pending));
            }
            current_ep = Some(ep);
        }
        pending.push((x, u, xn));
    }
    if let Some(prev) = current_ep {
        buffer.push_episode(prev, pending);
    }

    let best_eval = if r.u8()? != 0 {
        Some(BestEval {
            cost: r.f64()?,
            policy_params: r.vec()?,
        })
    } else {
        None
    };

    Ok(TrainerState {
        seed,
        episode,
        model,
        adam,
        policy,
        buffer,
        best_eval,
    })
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn checkpoint_save(state: &TrainerState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let bytes = encode(state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<TrainerState> {
    let bytes = std::fs::read(path).map_err(|e| EngineError::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode(&bytes).map_err(|e| match e {
        EngineError::Checkpoint { reason, .. } => EngineError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainerConfig;
    use crate::trainer::init_state;

    fn demo_state() -> TrainerState {
        let cfg = TrainerConfig::from_toml_str(crate::trainer::tests::PENDULUM_SMOKE).unwrap();
        let mut st = init_state(&cfg).unwrap();
        st.episode = 7;
        st.buffer.push_episode(
            0,
            vec![
                (vec![0.1, 0.2], vec![0.5], vec![0.15, 0.25]),
                (vec![0.15, 0.25], vec![0.4], vec![0.2, 0.3]),
            ],
        );
        st.best_eval = Some(BestEval {
            cost: 3.25,
            policy_params: st.policy.net.params().to_vec(),
        });
        st
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let state = demo_state();
        checkpoint_save(&state, &path).unwrap();
        let loaded = checkpoint_load(&path).unwrap();
        assert_eq!(loaded.seed, state.seed);
        assert_eq!(loaded.episode, 7);
        assert_eq!(loaded.model.net.params(), state.model.net.params());
        assert_eq!(loaded.policy.net.params(), state.policy.net.params());
        assert_eq!(loaded.buffer.len(), 2);
        assert_eq!(
            loaded.buffer.transitions()[1].x_next,
            state.buffer.transitions()[1].x_next
        );
        assert_eq!(loaded.best_eval.as_ref().unwrap().cost, 3.25);
        // Saving the loaded state reproduces the same bytes.
        let again = encode(&loaded);
        assert_eq!(again, encode(&state));
    }

    #[test]
    fn truncated_file_errors_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let state = demo_state();
        checkpoint_save(&state, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            checkpoint_load(&path),
            Err(EngineError::Checkpoint { .. })
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        checkpoint_save(&demo_state(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field
        std::fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
