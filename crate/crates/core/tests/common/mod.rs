#![allow(dead_code)]

use anchortraj::geom::{so3_exp, RigidPose, Rotation, SimTangent, SimTransform};
use anchortraj::trajio::{JointFrame, Trajectory, NUM_JOINTS};
use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vector3::new(x, y, z)
}

pub fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Rotation with angle uniform in `[0, max_angle)`.
pub fn rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation {
    let axis = unit_vector(rng);
    so3_exp(&(axis * rng.random_range(0.0..max_angle))).unwrap()
}

pub fn pose(rng: &mut ChaCha8Rng, extent: f64) -> RigidPose {
    RigidPose::new(rotation(rng, std::f64::consts::PI), gaussian3(rng) * extent)
}

pub fn sim(rng: &mut ChaCha8Rng) -> SimTransform {
    let p = pose(rng, 2.0);
    SimTransform::new(p.rotation, p.translation, rng.random_range(-1.0f64..1.0).exp()).unwrap()
}

/// Tangent with `‖ξ‖ ≤ max_norm`.
pub fn tangent(rng: &mut ChaCha8Rng, max_norm: f64) -> SimTangent {
    let v: [f64; 7] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = max_norm * rng.random::<f64>();
    SimTangent::from_array(v.map(|x| x / n * r))
}

/// Dense `Σ_{k<terms} Aᵏ/k!`.
pub fn matrix_exp_series(a: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..terms {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

/// Smooth random walk of `n` poses.
pub fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let mut current = pose(rng, 1.0);
    let mut poses = Vec::with_capacity(n);
    for _ in 0..n {
        poses.push(current);
        let step = RigidPose::new(so3_exp(&(gaussian3(rng) * 0.02)).unwrap(), gaussian3(rng) * 0.05);
        current = current.compose(&step);
    }
    Trajectory::from_poses(30.0, poses).unwrap()
}

pub fn skeleton(rng: &mut ChaCha8Rng) -> JointFrame {
    std::array::from_fn(|_| Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(0.0..1.8)))
}

pub fn assert_pose_close(a: &RigidPose, b: &RigidPose, tol: f64) {
    let dt = (a.translation - b.translation).norm();
    let dq = a.rotation.quaternion_distance(&b.rotation);
    assert!(dt <= tol && dq <= tol, "poses differ: translation {dt:e}, rotation {dq:e}");
}

pub const JOINTS: usize = NUM_JOINTS;
