//! Simulated ground-truth plants: the "real world" the online learner
//! interacts with.
//!
//! Three plants are provided. The linear plant is the exactness oracle (its
//! Jacobians are known in closed form), the pendulum is the standard smooth
//! nonlinear benchmark, and the two-link actuated arm adds first-order
//! actuator lag with a deadband plus an end-effector payload, mimicking the
//! valve character of hydraulic machines.
//!
//! All plants map the bounded state/action boxes back into themselves by
//! clamping, and are pure functions of (config, state, action, noise draw).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, EngineError, Result};

/// Plant state vector; dimension and units are plant-specific.
pub type PlantState = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKindTag {
    Linear,
    Pendulum,
    ActuatedArm,
}

/// Linear plant x⁺ = A x + B u with a stable A (spectral radius < 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    /// Row-major n x n.
    pub a: Vec<Vec<f64>>,
    /// Row-major n x m.
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    /// Bob mass [kg].
    pub mass: f64,
    /// Rod length [m].
    pub length: f64,
    /// Viscous damping [N·m·s/rad].
    pub damping: f64,
    /// Gravity [m/s²].
    pub gravity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmParams {
    /// Link lengths [m].
    pub l1: f64,
    pub l2: f64,
    /// Point masses at the link ends [kg].
    pub m1: f64,
    pub m2: f64,
    /// Payload mass added at the end effector [kg].
    pub payload: f64,
    /// Joint viscous damping.
    pub damping: f64,
    /// Actuator first-order lag time constant [s].
    pub tau_lag: f64,
    /// Command deadband half-width.
    pub deadband: f64,
    pub gravity: f64,
}

/// One plant's full description: kind, physical parameters, timing, and the
/// bounded boxes for states, actions, and reference waypoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub kind: PlantKindTag,
    /// Step duration [s].
    pub dt: f64,
    /// Std-dev of additive Gaussian process noise on the state (0 = off).
    #[serde(default)]
    pub noise_sigma: f64,
    /// Action-penalty weight in the stage cost.
    #[serde(default)]
    pub lambda_u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmParams>,
    /// Per-dimension [lo, hi] state box; defaults per plant kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_box: Option<Vec<[f64; 2]>>,
    /// Per-dimension [lo, hi] action box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_box: Option<Vec<[f64; 2]>>,
    /// Per-dimension [lo, hi] box for reference-spline waypoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_box: Option<Vec<[f64; 2]>>,
    /// Per-dimension scale dividing the state in policy inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_state_scale: Option<Vec<f64>>,
}

/// Result of one plant step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: PlantState,
    /// The action actually applied (after clamping into the action box).
    pub u_exec: Vec<f64>,
    /// Per-component flags: true where the commanded action was clamped.
    pub u_clamped: Vec<bool>,
    /// True if any state component was clamped into the state box.
    pub x_clamped: bool,
}

fn clamp_box(v: &mut [f64], boxes: &[[f64; 2]]) -> bool {
    let mut clamped = false;
    for (x, b) in v.iter_mut().zip(boxes) {
        let c = x.clamp(b[0], b[1]);
        if c != *x {
            clamped = true;
            *x = c;
        }
    }
    clamped
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

impl LinearParams {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.b.first().map_or(0, |r| r.len())
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let m = self.m();
        DMatrix::from_fn(n, m, |i, j| self.b[i][j])
    }

    /// Random (A, B) with A rescaled to the requested spectral radius.
    pub fn stable_random<R: Rng + ?Sized>(n: usize, m: usize, radius: f64, rng: &mut R) -> Self {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let rho = spectral_radius(&a);
        if rho > 0.0 {
            a *= radius / rho;
        }
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        Self {
            a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
            b,
        }
    }
}

impl PlantConfig {
    pub fn pendulum_default() -> Self {
        Self {
            kind: PlantKindTag::Pendulum,
            dt: 0.01,
            noise_sigma: 0.0,
            lambda_u: 0.0,
            linear: None,
            pendulum: Some(PendulumParams {
                mass: 1.0,
                length: 1.0,
                damping: 0.15,
                gravity: 9.81,
            }),
            arm: None,
            state_box: None,
            action_box: None,
            ref_box: None,
            policy_state_scale: None,
        }
    }

    pub fn linear_from(params: LinearParams, dt: f64) -> Self {
        Self {
            kind: PlantKindTag::Linear,
            dt,
            noise_sigma: 0.0,
            lambda_u: 0.0,
            linear: Some(params),
            pendulum: None,
            arm: None,
            state_box: None,
            action_box: None,
            ref_box: None,
            policy_state_scale: None,
        }
    }

    pub fn arm_default() -> Self {
        Self {
            kind: PlantKindTag::ActuatedArm,
            dt: 0.01,
            noise_sigma: 0.0,
            lambda_u: 0.0,
            linear: None,
            pendulum: None,
            arm: Some(ArmParams {
                l1: 0.75,
                l2: 0.75,
                m1: 1.0,
                m2: 1.0,
                payload: 1.0,
                damping: 1.0,
                tau_lag: 0.05,
                deadband: 0.5,
                gravity: 9.81,
            }),
            state_box: None,
            action_box: None,
            ref_box: None,
            policy_state_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EngineError::config("plant dt must be positive"));
        }
        if self.noise_sigma < 0.0 {
            return Err(EngineError::config("noise_sigma must be >= 0"));
        }
        if self.lambda_u < 0.0 {
            return Err(EngineError::config("lambda_u must be >= 0"));
        }
        match self.kind {
            PlantKindTag::Linear => {
                let p = self
                    .linear
                    .as_ref()
                    .ok_or_else(|| EngineError::config("linear plant needs [plant.linear]"))?;
                let n = p.n();
                if n == 0 || p.m() == 0 {
                    return Err(EngineError::config("linear plant matrices are empty"));
                }
                if p.a.iter().any(|r| r.len() != n) || p.b.len() != n {
                    return Err(EngineError::config("linear plant matrix shapes inconsistent"));
                }
                let m = p.m();
                if p.b.iter().any(|r| r.len() != m) {
                    return Err(EngineError::config("linear plant B rows inconsistent"));
                }
                let rho = spectral_radius(&p.a_matrix());
                if rho >= 1.0 {
                    return Err(EngineError::config(format!(
                        "linear plant A must be stable, spectral radius {rho:.4}"
                    )));
                }
            }
            PlantKindTag::Pendulum => {
                let p = self
                    .pendulum
                    .as_ref()
                    .ok_or_else(|| EngineError::config("pendulum plant needs [plant.pendulum]"))?;
                for (name, v) in [("mass", p.mass), ("length", p.length)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(EngineError::config(format!("pendulum {name} must be positive")));
                    }
                }
                if p.damping < 0.0 || !p.gravity.is_finite() {
                    return Err(EngineError::config("pendulum damping/gravity invalid"));
                }
            }
            PlantKindTag::ActuatedArm => {
                let p = self
                    .arm
                    .as_ref()
                    .ok_or_else(|| EngineError::config("actuated_arm plant needs [plant.arm]"))?;
                for (name, v) in [
                    ("l1", p.l1),
                    ("l2", p.l2),
                    ("m1", p.m1),
                    ("m2", p.m2),
                    ("tau_lag", p.tau_lag),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(EngineError::config(format!("arm {name} must be positive")));
                    }
                }
                if p.payload < 0.0 || p.damping < 0.0 || p.deadband < 0.0 {
                    return Err(EngineError::config("arm payload/damping/deadband must be >= 0"));
                }
            }
        }
        for (name, b, dim) in [
            ("state_box", &self.state_box, self.state_dim()),
            ("action_box", &self.action_box, self.action_dim()),
            ("ref_box", &self.ref_box, self.spline_dim()),
        ] {
            if let Some(bx) = b {
                if bx.len() != dim {
                    return Err(EngineError::config(format!("{name} has wrong dimension")));
                }
                if bx.iter().any(|p| !(p[0] < p[1])) {
                    return Err(EngineError::config(format!("{name} has an empty interval")));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            PlantKindTag::Linear => self.linear.as_ref().map_or(0, |p| p.n()),
            PlantKindTag::Pendulum => 2,
            PlantKindTag::ActuatedArm => 6,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            PlantKindTag::Linear => self.linear.as_ref().map_or(0, |p| p.m()),
            PlantKindTag::Pendulum => 1,
            PlantKindTag::ActuatedArm => 2,
        }
    }

    /// Dimension of the tracked quantity p(x).
    pub fn tracked_dim(&self) -> usize {
        match self.kind {
            PlantKindTag::Linear => self.state_dim(),
            PlantKindTag::Pendulum => 2,
            PlantKindTag::ActuatedArm => 2,
        }
    }

    /// Dimension of the reference-spline waypoint space.
    pub fn spline_dim(&self) -> usize {
        match self.kind {
            PlantKindTag::Linear => self.state_dim(),
            PlantKindTag::Pendulum => 1,
            PlantKindTag::ActuatedArm => 2,
        }
    }

    /// Dimension of one reference point as consumed by cost and policy.
    pub fn ref_dim(&self) -> usize {
        self.tracked_dim()
    }

    pub fn state_box(&self) -> Vec<[f64; 2]> {
        if let Some(b) = &self.state_box {
            return b.clone();
        }
        match self.kind {
            PlantKindTag::Linear => vec![[-1e6, 1e6]; self.state_dim()],
            PlantKindTag::Pendulum => vec![[-6.4, 6.4], [-25.0, 25.0]],
            PlantKindTag::ActuatedArm => vec![
                [-3.2, 3.2],
                [-3.2, 3.2],
                [-15.0, 15.0],
                [-15.0, 15.0],
                [-120.0, 120.0],
                [-120.0, 120.0],
            ],
        }
    }

    pub fn action_box(&self) -> Vec<[f64; 2]> {
        if let Some(b) = &self.action_box {
            return b.clone();
        }
        match self.kind {
            PlantKindTag::Linear => vec![[-1e6, 1e6]; self.action_dim()],
            PlantKindTag::Pendulum => vec![[-40.0, 40.0]],
            PlantKindTag::ActuatedArm => vec![[-80.0, 80.0], [-80.0, 80.0]],
        }
    }

    pub fn ref_box(&self) -> Vec<[f64; 2]> {
        if let Some(b) = &self.ref_box {
            return b.clone();
        }
        match self.kind {
            PlantKindTag::Linear => vec![[-1.0, 1.0]; self.spline_dim()],
            PlantKindTag::Pendulum => vec![[-1.2, 1.2]],
            PlantKindTag::ActuatedArm => vec![[0.5, 1.15], [-0.35, 0.35]],
        }
    }

    pub fn policy_state_scale(&self) -> Vec<f64> {
        if let Some(s) = &self.policy_state_scale {
            return s.clone();
        }
        match self.kind {
            PlantKindTag::Linear => vec![1.0; self.state_dim()],
            PlantKindTag::Pendulum => vec![1.5, 3.0],
            PlantKindTag::ActuatedArm => vec![1.6, 1.6, 4.0, 4.0, 60.0, 60.0],
        }
    }

    /// The raw (unclamped, noise-free) dynamics map. This is what
    /// `true_jacobians` differentiates.
    fn raw_step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.dt;
        match self.kind {
            PlantKindTag::Linear => {
                let p = self.linear.as_ref().unwrap();
                let n = p.n();
                let mut next = vec![0.0; n];
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, xv) in x.iter().enumerate() {
                        acc += p.a[i][j] * xv;
                    }
                    for (j, uv) in u.iter().enumerate() {
                        acc += p.b[i][j] * uv;
                    }
                    next[i] = acc;
                }
                next
            }
            PlantKindTag::Pendulum => {
                let p = self.pendulum.as_ref().unwrap();
                let (theta, omega) = (x[0], x[1]);
                let inertia = p.mass * p.length * p.length;
                let acc =
                    (u[0] - p.damping * omega - p.mass * p.gravity * p.length * theta.sin())
                        / inertia;
                let omega_next = omega + dt * acc;
                let theta_next = theta + dt * omega_next;
                vec![theta_next, omega_next]
            }
            PlantKindTag::ActuatedArm => {
                let p = self.arm.as_ref().unwrap();
                let (q1, q2) = (x[0], x[1]);
                let (dq1, dq2) = (x[2], x[3]);
                let (v1, v2) = (x[4], x[5]);
                let m2 = p.m2 + p.payload;
                let (c2, s2) = (q2.cos(), q2.sin());

                let m11 = (p.m1 + m2) * p.l1 * p.l1 + m2 * p.l2 * p.l2 + 2.0 * m2 * p.l1 * p.l2 * c2;
                let m12 = m2 * p.l2 * p.l2 + m2 * p.l1 * p.l2 * c2;
                let m22 = m2 * p.l2 * p.l2;
                let h = m2 * p.l1 * p.l2 * s2;
                let cor1 = -h * (2.0 * dq1 * dq2 + dq2 * dq2);
                let cor2 = h * dq1 * dq1;
                let g1 = (p.m1 + m2) * p.gravity * p.l1 * q1.cos()
                    + m2 * p.gravity * p.l2 * (q1 + q2).cos();
                let g2 = m2 * p.gravity * p.l2 * (q1 + q2).cos();

                let rhs1 = v1 - cor1 - g1 - p.damping * dq1;
                let rhs2 = v2 - cor2 - g2 - p.damping * dq2;
                let det = m11 * m22 - m12 * m12;
                let ddq1 = (m22 * rhs1 - m12 * rhs2) / det;
                let ddq2 = (-m12 * rhs1 + m11 * rhs2) / det;

                let deadband = |c: f64| c.signum() * (c.abs() - p.deadband).max(0.0);
                let v1_next = v1 + dt * (deadband(u[0]) - v1) / p.tau_lag;
                let v2_next = v2 + dt * (deadband(u[1]) - v2) / p.tau_lag;
                let dq1_next = dq1 + dt * ddq1;
                let dq2_next = dq2 + dt * ddq2;
                vec![
                    q1 + dt * dq1_next,
                    q2 + dt * dq2_next,
                    dq1_next,
                    dq2_next,
                    v1_next,
                    v2_next,
                ]
            }
        }
    }

    /// Advances the plant one step. The action is clamped into the action
    /// box (flagged per component) and the next state is clamped into the
    /// state box. `noise` is an optional pre-drawn standard-normal vector,
    /// scaled by `noise_sigma`.
    pub fn step(&self, x: &[f64], u: &[f64], noise: Option<&[f64]>) -> Result<StepOutcome> {
        check_len("state", x.len(), self.state_dim())?;
        check_len("action", u.len(), self.action_dim())?;
        if x.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::numeric("non-finite state or action in step"));
        }
        let abox = self.action_box();
        let mut u_exec = u.to_vec();
        let mut u_clamped = vec![false; u.len()];
        for i in 0..u.len() {
            let c = u_exec[i].clamp(abox[i][0], abox[i][1]);
            if c != u_exec[i] {
                u_clamped[i] = true;
                u_exec[i] = c;
            }
        }
        let mut next = self.raw_step(x, &u_exec);
        if self.noise_sigma > 0.0 {
            if let Some(xi) = noise {
                check_len("noise", xi.len(), next.len())?;
                for (v, n) in next.iter_mut().zip(xi) {
                    *v += self.noise_sigma * n;
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::numeric("plant produced non-finite state"));
        }
        let x_clamped = clamp_box(&mut next, &self.state_box());
        Ok(StepOutcome {
            next,
            u_exec,
            u_clamped,
            x_clamped,
        })
    }

    /// Exact Jacobians for the linear plant; central finite differences of
    /// the raw dynamics (step 1e-6) for the nonlinear plants.
    pub fn true_jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len("state", x.len(), self.state_dim())?;
        check_len("action", u.len(), self.action_dim())?;
        let n = self.state_dim();
        let m = self.action_dim();
        if let PlantKindTag::Linear = self.kind {
            let p = self.linear.as_ref().unwrap();
            return Ok((p.a_matrix(), p.b_matrix()));
        }
        let h = 1e-6;
        let mut dfdx = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            let fp = self.raw_step(&xp, u);
            let fm = self.raw_step(&xm, u);
            for i in 0..n {
                dfdx[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let mut dfdu = DMatrix::zeros(n, m);
        for j in 0..m {
            let mut up = u.to_vec();
            up[j] += h;
            let mut um = u.to_vec();
            um[j] -= h;
            let fp = self.raw_step(x, &up);
            let fm = self.raw_step(x, &um);
            for i in 0..n {
                dfdu[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok((dfdx, dfdu))
    }

    /// Projects a state to the tracked quantity p(x): the full state for
    /// linear/pendulum, the end-effector position for the arm.
    pub fn tracked(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            PlantKindTag::Linear | PlantKindTag::Pendulum => x.to_vec(),
            PlantKindTag::ActuatedArm => {
                let p = self.arm.as_ref().unwrap();
                forward_kinematics(p.l1, p.l2, x[0], x[1]).to_vec()
            }
        }
    }

    /// ∂p/∂x, shape (tracked_dim x state_dim).
    pub fn tracked_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self.kind {
            PlantKindTag::Linear | PlantKindTag::Pendulum => {
                DMatrix::identity(self.state_dim(), self.state_dim())
            }
            PlantKindTag::ActuatedArm => {
                let p = self.arm.as_ref().unwrap();
                let (q1, q2) = (x[0], x[1]);
                let s1 = q1.sin();
                let c1 = q1.cos();
                let s12 = (q1 + q2).sin();
                let c12 = (q1 + q2).cos();
                let mut j = DMatrix::zeros(2, 6);
                j[(0, 0)] = -p.l1 * s1 - p.l2 * s12;
                j[(0, 1)] = -p.l2 * s12;
                j[(1, 0)] = p.l1 * c1 + p.l2 * c12;
                j[(1, 1)] = p.l2 * c12;
                j
            }
        }
    }

    /// Stage cost c = ‖p(x) − x̃‖² + λ_u‖u‖².
    pub fn stage_cost(&self, x: &[f64], u: &[f64], ref_point: &[f64]) -> Result<f64> {
        check_len("ref_point", ref_point.len(), self.tracked_dim())?;
        let p = self.tracked(x);
        let track: f64 = p
            .iter()
            .zip(ref_point)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let effort: f64 = u.iter().map(|v| v * v).sum();
        Ok(track + self.lambda_u * effort)
    }

    /// Total per-step cost sensitivities (∂c/∂x, ∂c/∂u) as row vectors.
    pub fn stage_cost_grad(&self, x: &[f64], u: &[f64], ref_point: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.tracked(x);
        let jp = self.tracked_jacobian(x);
        let n = self.state_dim();
        let mut dcdx = vec![0.0; n];
        for k in 0..p.len() {
            let e = 2.0 * (p[k] - ref_point[k]);
            for j in 0..n {
                dcdx[j] += e * jp[(k, j)];
            }
        }
        let dcdu: Vec<f64> = u.iter().map(|v| 2.0 * self.lambda_u * v).collect();
        (dcdx, dcdu)
    }

    /// Builds the reference point for one spline sample (value and time
    /// derivative in waypoint space). The pendulum tracks the full state, so
    /// its reference carries the spline's angular velocity.
    pub fn reference_from_spline(&self, value: &[f64], deriv: &[f64]) -> Vec<f64> {
        match self.kind {
            PlantKindTag::Linear | PlantKindTag::ActuatedArm => value.to_vec(),
            PlantKindTag::Pendulum => vec![value[0], deriv[0]],
        }
    }

    /// Initial plant state induced by the first reference point.
    pub fn initial_state_for(&self, ref0: &[f64]) -> Result<PlantState> {
        check_len("ref0", ref0.len(), self.ref_dim())?;
        match self.kind {
            PlantKindTag::Linear | PlantKindTag::Pendulum => Ok(ref0.to_vec()),
            PlantKindTag::ActuatedArm => {
                let p = self.arm.as_ref().unwrap();
                let (q1, q2) = inverse_kinematics(p.l1, p.l2, ref0[0], ref0[1])?;
                Ok(vec![q1, q2, 0.0, 0.0, 0.0, 0.0])
            }
        }
    }

    /// Returns a config with the end-effector payload replaced. Only the arm
    /// plant is affected; other plants are returned unchanged.
    pub fn set_payload(&self, mass: f64) -> Result<PlantConfig> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(EngineError::contract("payload mass must be >= 0"));
        }
        let mut cfg = self.clone();
        if let Some(arm) = cfg.arm.as_mut() {
            arm.payload = mass;
        }
        Ok(cfg)
    }

    /// Payload currently in effect (0 for payload-free plants).
    pub fn payload(&self) -> f64 {
        self.arm.as_ref().map_or(0.0, |p| p.payload)
    }
}

pub fn forward_kinematics(l1: f64, l2: f64, q1: f64, q2: f64) -> [f64; 2] {
    [
        l1 * q1.cos() + l2 * (q1 + q2).cos(),
        l1 * q1.sin() + l2 * (q1 + q2).sin(),
    ]
}

/// Closed-form two-link inverse kinematics, elbow-down branch.
pub fn inverse_kinematics(l1: f64, l2: f64, x: f64, y: f64) -> Result<(f64, f64)> {
    let r2 = x * x + y * y;
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Err(EngineError::contract(format!(
            "target ({x:.3}, {y:.3}) outside the reachable annulus"
        )));
    }
    let q2 = -c2.acos();
    let q1 = y.atan2(x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok((q1, q2))
}
