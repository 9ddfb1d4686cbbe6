mod common;

use anchortraj::anchors::AnchorSet;
use anchortraj::geom::{embed_rigid, project_rigid, sim3_exp, sim3_log, RigidPose, SimTransform};
use anchortraj::refine::*;
use anchortraj::trajio::{format_trajectory, AnchorCandidate, Trajectory};
use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn anchor(frame: u64, pose: RigidPose) -> AnchorCandidate {
    AnchorCandidate { frame_index: frame, pose, inlier_count: 1000, inlier_ratio: 0.9 }
}

fn rigid(t: &SimTransform) -> RigidPose {
    project_rigid(t, 1e-9, false).unwrap()
}

fn configs() -> [RefineConfig; 2] {
    [
        RefineConfig::default(),
        RefineConfig { scale_mode: ScaleMode::AnchorDistanceRatio, ..Default::default() },
    ]
}

/// Anchors at the given frames, perturbed away from the SLAM poses.
fn noisy_anchors(rng: &mut ChaCha8Rng, slam: &Trajectory, frames: &[u64]) -> AnchorSet {
    let world = pose(rng, 3.0);
    let list = frames
        .iter()
        .map(|&f| {
            let jitter = RigidPose::new(rotation(rng, 0.3), gaussian3(rng) * 0.2);
            anchor(f, world.compose(slam.pose_at(f).unwrap()).compose(&jitter))
        })
        .collect();
    AnchorSet::from_sorted(list).unwrap()
}

#[test]
fn boundaries_hit_anchors() {
    let mut r = rng(20);
    for config in configs() {
        for _ in 0..100 {
            let len = r.random_range(2..60);
            let slam = random_trajectory(&mut r, len + 1);
            let set = noisy_anchors(&mut r, &slam, &[0, len as u64]);
            let [a, b] = [set.anchors()[0], set.anchors()[1]];
            let sol = interpolate_interval(&a, &b, &slam, &config).unwrap();
            assert_pose_close(&sol.poses[0], &a.pose, 1e-9);
            assert_pose_close(sol.poses.last().unwrap(), &b.pose, 1e-9);
        }
    }
}

#[test]
fn shared_anchors_agree_between_intervals() {
    let mut r = rng(21);
    for _ in 0..50 {
        let slam = random_trajectory(&mut r, 121);
        let set = noisy_anchors(&mut r, &slam, &[0, 40, 80, 120]);
        let a = set.anchors();
        let config = RefineConfig::default();
        for k in 0..2 {
            let left = interpolate_interval(&a[k], &a[k + 1], &slam, &config).unwrap();
            let right = interpolate_interval(&a[k + 1], &a[k + 2], &slam, &config).unwrap();
            assert_pose_close(left.poses.last().unwrap(), &right.poses[0], 1e-12);
        }
        let refined = refine_trajectory(&set, &slam, &config).unwrap();
        for x in a {
            assert_eq!(refined.pose_at(x.frame_index).unwrap(), &x.pose);
        }
    }
}

#[test]
fn zero_residual_keeps_the_segment_rigid() {
    let mut r = rng(22);
    for _ in 0..50 {
        let slam = random_trajectory(&mut r, 50);
        let world = pose(&mut r, 3.0);
        let set = AnchorSet::from_sorted(vec![
            anchor(0, world.compose(slam.pose_at(0).unwrap())),
            anchor(49, world.compose(slam.pose_at(49).unwrap())),
        ])
        .unwrap();
        let refined = refine_trajectory(&set, &slam, &RefineConfig::default()).unwrap();
        let out: Vec<&RigidPose> = refined.poses().collect();
        let inp: Vec<&RigidPose> = slam.poses().collect();
        for i in (0..50).step_by(7) {
            for j in (0..50).step_by(5) {
                let rel_out = out[i].inverse().compose(out[j]);
                let rel_in = inp[i].inverse().compose(inp[j]);
                assert_pose_close(&rel_out, &rel_in, 1e-9);
            }
        }
    }
}

#[test]
fn equivariant_under_a_common_world_transform() {
    let mut r = rng(23);
    for config in configs() {
        for _ in 0..50 {
            let slam = random_trajectory(&mut r, 101);
            let set = noisy_anchors(&mut r, &slam, &[10, 45, 90]);
            let g = pose(&mut r, 5.0);
            let moved = AnchorSet::from_sorted(
                set.anchors().iter().map(|a| anchor(a.frame_index, g.compose(&a.pose))).collect(),
            )
            .unwrap();
            let base = refine_trajectory(&set, &slam, &config).unwrap();
            let shifted = refine_trajectory(&moved, &slam, &config).unwrap();
            for (b, s) in base.poses().zip(shifted.poses()) {
                assert_pose_close(&g.compose(b), s, 1e-9);
            }
        }
    }
}

#[test]
fn exact_inversion_recovers_ground_truth() {
    let mut r = rng(24);
    for _ in 0..50 {
        let len = r.random_range(5..80u64);
        let gt = random_trajectory(&mut r, len as usize + 1);
        let s = embed_rigid(&pose(&mut r, 2.0));
        let e = embed_rigid(&RigidPose::new(rotation(&mut r, 3.0), gaussian3(&mut r)));
        let log_e = sim3_log(&e).unwrap();
        let poses: Vec<RigidPose> = gt
            .poses()
            .enumerate()
            .map(|(t, p)| {
                let undo = sim3_exp(&log_e.scaled(-(t as f64) / len as f64)).unwrap();
                rigid(&s.inverse().compose(&undo).compose(&embed_rigid(p)))
            })
            .collect();
        let slam = Trajectory::from_poses(gt.fps(), poses).unwrap();
        let set = AnchorSet::from_sorted(vec![anchor(0, gt.frames()[0].pose), anchor(len, gt.frames()[len as usize].pose)]).unwrap();
        let refined = refine_trajectory(&set, &slam, &RefineConfig::default()).unwrap();
        for (a, b) in refined.poses().zip(gt.poses()) {
            assert!((a.translation - b.translation).norm() < 1e-6);
        }
    }
}

fn csv(t: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    format_trajectory(t, &mut buf).unwrap();
    buf
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let mut r = rng(25);
    let slam = random_trajectory(&mut r, 2001);
    let frames: Vec<u64> = (0..=2000).step_by(25).collect();
    let set = noisy_anchors(&mut r, &slam, &frames);
    for config in configs() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            csv(&pool.install(|| refine_trajectory(&set, &slam, &config).unwrap()))
        };
        let one = run(1);
        assert_eq!(one, run(8));
        assert_eq!(one, run(8));
    }
}

#[test]
fn canonicalization_round_trips_and_keeps_gravity() {
    let mut r = rng(26);
    for _ in 0..100 {
        let traj = random_trajectory(&mut r, 30);
        let (canonical, xf) = canonicalize(&traj).unwrap();
        let first = &canonical.frames()[0].pose;
        assert!(first.translation.norm() < 1e-9);
        let f = first.forward();
        assert!(f.y.abs() < 1e-9 && f.x > 0.0);
        let up = xf.world_from_canonical.rotation.rotate(&nalgebra::Vector3::z());
        assert!((up - nalgebra::Vector3::z()).norm() < 1e-12);
        for (a, b) in uncanonicalize(&canonical, &xf).poses().zip(traj.poses()) {
            assert_pose_close(a, b, 1e-9);
        }
        let back = CanonicalizationTransform::from_json(&xf.to_json()).unwrap();
        assert_pose_close(&back.world_from_canonical, &xf.world_from_canonical, 1e-15);
    }
}
