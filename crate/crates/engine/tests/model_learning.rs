//! Model-learning convergence against representable-optimum and trend
//! oracles.

use ombrl_engine::adam::AdamState;
use ombrl_engine::config::TrainerConfig;
use ombrl_engine::model::{linear_capacity_model, model_update};
use ombrl_engine::plants::{LinearParams, PlantConfig};
use ombrl_engine::replay::{ReplayBuffer, Transition};
use ombrl_engine::seed::{self, Stream};
use ombrl_engine::trainer::{init_state, run_training};
use rand::Rng;

fn linear_buffer(seed_v: u64, steps: usize) -> (PlantConfig, ReplayBuffer) {
    let mut rng = seed::rng_for(seed_v, Stream::PlantSetup);
    let params = LinearParams::stable_random(3, 2, 0.85, &mut rng);
    let plant = PlantConfig::linear_from(params, 0.01);
    let mut buf = ReplayBuffer::new(None);
    let mut x = vec![0.2, -0.4, 0.6];
    let mut transitions = Vec::new();
    for _ in 0..steps {
        let u: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let out = plant.step(&x, &u, None).unwrap();
        transitions.push((x.clone(), u, out.next.clone()));
        x = out.next;
    }
    buf.push_episode(0, transitions);
    (plant, buf)
}

#[test]
fn linear_capacity_model_reaches_1e8_within_2000_steps() {
    let (plant, buf) = linear_buffer(3, 400);
    let mut rng = seed::rng_for(3, Stream::ModelInit);
    let mut model = linear_capacity_model(3, 2, plant.dt, &mut rng).unwrap();
    let mut opt = AdamState::new(model.net.n_params());
    let mut brng = seed::rng_for(3, Stream::Minibatch);
    model_update(&mut model, &buf, &mut opt, 0.01, 256, 2000, &mut brng).unwrap();
    let probe: Vec<&Transition> = buf.transitions().iter().collect();
    let loss = model.loss(&probe).unwrap();
    assert!(loss < 1e-8, "loss after 2000 inner steps: {loss}");
}

#[test]
fn probe_loss_trend_is_non_increasing_on_a_standard_run() {
    // Median probe loss of the last 10 episodes must not exceed the median
    // of the first 10 in a 40-episode pendulum run.
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
[plant]
kind = "pendulum"
dt = 0.01
ref_box = [[-1.0, 1.0]]

[plant.pendulum]
mass = 1.0
length = 1.0
damping = 1.0
gravity = 9.81

[trainer]
episodes = 40
steps_per_trajectory = 100
trajectories_per_episode = 1
seed = 5
checkpoint_every = 0

[model]
hidden = [32, 32]
inner_steps = 32
batch_size = 128

[policy]
hidden = [16, 16]
eta = 0.5
alpha = 0.1
epsilon = 1e-3
lookahead = 5
prev_actions = 0
action_scale = 20.0

[output]
dir = "{}"
"#,
        dir.path().display()
    );
    let cfg = TrainerConfig::from_toml_str(&text).unwrap();
    let mut state = init_state(&cfg).unwrap();
    let (log, _) = run_training(&cfg, &mut state, None).unwrap();
    let probes: Vec<f64> = log.records.iter().filter_map(|r| r.probe_loss).collect();
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let head = median(&probes[..10]);
    let tail = median(&probes[30..]);
    assert!(tail <= head, "probe trend increased: first {head}, last {tail}");
}
