//! Reference-trajectory generation.
//!
//! Training references are chains of rest-to-rest quintic polynomial
//! segments between uniformly sampled waypoints, so value, velocity, and
//! acceleration are continuous everywhere (zero at the segment joints). The
//! evaluation suite adds straight lines and circles as unseen shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::plants::PlantConfig;
use crate::seed::{self, Stream};

/// A sampled reference: `points[τ]` is the reference point x̃_τ consumed by
/// the cost and the policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub points: Vec<Vec<f64>>,
    pub dt: f64,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    /// Reference point with repetition padding past the end.
    pub fn point(&self, tau: usize) -> &[f64] {
        let idx = tau.min(self.points.len() - 1);
        &self.points[idx]
    }
}

/// Smooth-step quintic 10r³ − 15r⁴ + 6r⁵ and its derivative.
fn quintic(r: f64) -> (f64, f64) {
    let r2 = r * r;
    let r3 = r2 * r;
    (
        10.0 * r3 - 15.0 * r3 * r + 6.0 * r3 * r2,
        (30.0 * r2 - 60.0 * r3 + 30.0 * r2 * r2),
    )
}

/// Samples an H-step reference made of chained rest-to-rest quintic segments
/// with waypoints uniform in the plant's reference box.
///
/// `horizon` must be a positive multiple of `segment_steps`.
pub fn sample_reference<R: Rng + ?Sized>(
    plant: &PlantConfig,
    horizon: usize,
    segment_steps: usize,
    rng: &mut R,
) -> Result<ReferenceTrajectory> {
    if segment_steps == 0 || horizon == 0 || horizon % segment_steps != 0 {
        return Err(EngineError::contract(
            "horizon must be a positive multiple of segment_steps",
        ));
    }
    let n_segments = horizon / segment_steps;
    let rbox = plant.ref_box();
    let d = rbox.len();
    let sample_waypoint = |rng: &mut R| -> Vec<f64> {
        rbox.iter().map(|b| rng.random_range(b[0]..=b[1])).collect()
    };

    let mut waypoints = Vec::with_capacity(n_segments + 1);
    for _ in 0..=n_segments {
        waypoints.push(sample_waypoint(rng));
    }

    let seg_time = segment_steps as f64 * plant.dt;
    let mut points = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let seg = tau / segment_steps;
        let local = (tau % segment_steps) as f64 * plant.dt;
        let r = local / seg_time;
        let (q, dq) = quintic(r);
        let (w0, w1) = (&waypoints[seg], &waypoints[seg + 1]);
        let mut value = vec![0.0; d];
        let mut deriv = vec![0.0; d];
        for k in 0..d {
            let delta = w1[k] - w0[k];
            value[k] = w0[k] + delta * q;
            deriv[k] = delta * dq / seg_time;
        }
        points.push(plant.reference_from_spline(&value, &deriv));
    }
    Ok(ReferenceTrajectory {
        points,
        dt: plant.dt,
    })
}

/// A constant reference holding one waypoint.
pub fn constant_reference(plant: &PlantConfig, waypoint: &[f64], horizon: usize) -> ReferenceTrajectory {
    let d = waypoint.len();
    let zero = vec![0.0; d];
    let point = plant.reference_from_spline(waypoint, &zero);
    ReferenceTrajectory {
        points: vec![point; horizon],
        dt: plant.dt,
    }
}

/// Straight line between the box corners (shrunk toward the center).
fn line_reference(plant: &PlantConfig, horizon: usize) -> ReferenceTrajectory {
    let rbox = plant.ref_box();
    let d = rbox.len();
    let total = horizon as f64 * plant.dt;
    let mut points = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let r = tau as f64 * plant.dt / total;
        let mut value = vec![0.0; d];
        let mut deriv = vec![0.0; d];
        for k in 0..d {
            let lo = 0.75 * rbox[k][0] + 0.25 * rbox[k][1];
            let hi = 0.25 * rbox[k][0] + 0.75 * rbox[k][1];
            value[k] = lo + (hi - lo) * r;
            deriv[k] = (hi - lo) / total;
        }
        points.push(plant.reference_from_spline(&value, &deriv));
    }
    ReferenceTrajectory {
        points,
        dt: plant.dt,
    }
}

/// Circle in the first two waypoint dimensions (a sinusoid when the waypoint
/// space is one-dimensional), one full period over the horizon.
fn circle_reference(plant: &PlantConfig, horizon: usize) -> ReferenceTrajectory {
    let rbox = plant.ref_box();
    let d = rbox.len();
    let total = horizon as f64 * plant.dt;
    let omega = std::f64::consts::TAU / total;
    let center: Vec<f64> = rbox.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
    let radius: f64 = rbox
        .iter()
        .take(2)
        .map(|b| 0.4 * (b[1] - b[0]) * 0.5)
        .fold(f64::INFINITY, f64::min);
    let mut points = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let t = tau as f64 * plant.dt;
        let mut value = center.clone();
        let mut deriv = vec![0.0; d];
        value[0] += radius * (omega * t).sin();
        deriv[0] = radius * omega * (omega * t).cos();
        if d >= 2 {
            value[1] += radius * (omega * t).cos();
            deriv[1] = -radius * omega * (omega * t).sin();
        }
        points.push(plant.reference_from_spline(&value, &deriv));
    }
    ReferenceTrajectory {
        points,
        dt: plant.dt,
    }
}

/// Fixed evaluation suite: one line, one circle, and two seeded splines.
pub fn eval_suite(
    plant: &PlantConfig,
    horizon: usize,
    segment_steps: usize,
    master_seed: u64,
) -> Result<Vec<ReferenceTrajectory>> {
    let mut suite = vec![line_reference(plant, horizon), circle_reference(plant, horizon)];
    for k in 0..2u64 {
        let mut rng = seed::rng_for_episode(master_seed, Stream::EvalSuite, k);
        suite.push(sample_reference(plant, horizon, segment_steps, &mut rng)?);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::PlantConfig;
    use crate::seed;

    #[test]
    fn equal_waypoints_give_constant_segment() {
        let plant = PlantConfig::pendulum_default();
        let traj = constant_reference(&plant, &[0.7], 50);
        assert!(traj.points.iter().all(|p| p[0] == 0.7 && p[1] == 0.0));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let plant = PlantConfig::pendulum_default();
        let mut r1 = seed::rng_for_episode(3, seed::Stream::Reference, 0);
        let mut r2 = seed::rng_for_episode(3, seed::Stream::Reference, 0);
        let a = sample_reference(&plant, 200, 100, &mut r1).unwrap();
        let b = sample_reference(&plant, 200, 100, &mut r2).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
            assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
    }

    #[test]
    fn waypoints_stay_in_reference_box() {
        let plant = PlantConfig::arm_default();
        let rbox = plant.ref_box();
        let mut rng = seed::rng_for_episode(11, seed::Stream::Reference, 0);
        let traj = sample_reference(&plant, 600, 200, &mut rng).unwrap();
        for p in &traj.points {
            for (k, b) in rbox.iter().enumerate() {
                assert!(p[k] >= b[0] - 1e-12 && p[k] <= b[1] + 1e-12);
            }
        }
    }

    #[test]
    fn second_difference_has_no_joint_jump() {
        // Max second-difference jump at segment joints must not exceed 10x
        // the median interior second difference.
        let plant = PlantConfig::pendulum_default();
        let segment = 100;
        let mut rng = seed::rng_for_episode(5, seed::Stream::Reference, 2);
        let traj = sample_reference(&plant, 5 * segment, segment, &mut rng).unwrap();
        let theta: Vec<f64> = traj.points.iter().map(|p| p[0]).collect();
        let d2: Vec<f64> = (1..theta.len() - 1)
            .map(|i| (theta[i + 1] - 2.0 * theta[i] + theta[i - 1]).abs())
            .collect();
        let mut interior: Vec<f64> = d2
            .iter()
            .enumerate()
            .filter(|(i, _)| (i + 1) % segment > 2 && (i + 1) % segment < segment - 2)
            .map(|(_, v)| *v)
            .collect();
        interior.sort_by(f64::total_cmp);
        let median = interior[interior.len() / 2];
        let joint_max = d2
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let m = (i + 1) % segment;
                m <= 1 || m >= segment - 1
            })
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(
            joint_max <= 10.0 * median,
            "joint {joint_max} vs median {median}"
        );
    }

    #[test]
    fn horizon_must_divide_into_segments() {
        let plant = PlantConfig::pendulum_default();
        let mut rng = seed::rng_for(0, seed::Stream::Reference);
        assert!(sample_reference(&plant, 150, 100, &mut rng).is_err());
    }

    #[test]
    fn eval_suite_has_four_trajectories() {
        let plant = PlantConfig::arm_default();
        let suite = eval_suite(&plant, 200, 100, 9).unwrap();
        assert_eq!(suite.len(), 4);
        for traj in &suite {
            assert_eq!(traj.horizon(), 200);
        }
    }
}
