mod common;

use anchortraj::geom::RigidPose;
use anchortraj::metrics::*;
use anchortraj::trajio::{JointFrame, JointLayout, MotionSequence, Trajectory};
use common::*;
use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn motion(frames: Vec<JointFrame>) -> MotionSequence {
    MotionSequence::new(30.0, JointLayout::default(), frames).unwrap()
}

fn transform_frame(f: &JointFrame, g: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> JointFrame {
    std::array::from_fn(|j| g(&f[j]))
}

fn structured_pair(r: &mut ChaCha8Rng, n: usize) -> (MotionSequence, MotionSequence) {
    let gt: Vec<JointFrame> = (0..n).map(|_| skeleton(r)).collect();
    let global = pose(r, 1.0);
    let pred = gt
        .iter()
        .map(|f| {
            let local = RigidPose::new(rotation(r, 0.3), gaussian3(r) * 0.1);
            let s = r.random_range(0.8..1.2);
            let noise = r.random_range(0.0..0.05);
            let jitter: JointFrame = std::array::from_fn(|_| gaussian3(r) * noise);
            std::array::from_fn(|j| global.transform_point(&local.transform_point(&(f[j] * s))) + jitter[j])
        })
        .collect();
    (motion(pred), motion(gt))
}

#[test]
fn aligned_errors_are_nested() {
    let mut r = rng(40);
    for _ in 0..100 {
        let n = r.random_range(1..20);
        let (pred, gt) = structured_pair(&mut r, n);
        let raw = mpjpe(&pred, &gt).unwrap().mean;
        let rigid = mpjpe_rigid(&pred, &gt).unwrap().mean;
        let pa = mpjpe_pa(&pred, &gt).unwrap().mean;
        assert!(pa <= rigid + 1e-9 && rigid <= raw + 1e-9, "pa {pa} rigid {rigid} raw {raw}");
    }
}

#[test]
fn umeyama_recovers_a_constructed_similarity() {
    let mut r = rng(41);
    for _ in 0..500 {
        let n = r.random_range(3..50);
        let src: Vec<Vector3<f64>> = (0..n).map(|_| gaussian3(&mut r)).collect();
        let rot = rotation(&mut r, PI);
        let t = gaussian3(&mut r) * 5.0;
        let s = r.random_range(-1.5f64..1.5).exp();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| s * rot.rotate(p) + t).collect();

        let a = umeyama_align(&src, &dst, true).unwrap();
        assert!(a.residual_rms < 1e-9);
        assert!(a.rotation.quaternion_distance(&rot) < 1e-9);
        assert!((a.scale - s).abs() < 1e-9 * s);
        assert!((a.translation - t).norm() < 1e-9);

        let unit: Vec<Vector3<f64>> = src.iter().map(|p| rot.rotate(p) + t).collect();
        let b = umeyama_align(&src, &unit, false).unwrap();
        assert_eq!(b.scale, 1.0);
        assert!(b.residual_rms < 1e-9);
    }
}

#[test]
fn umeyama_rejects_degenerate_sources() {
    let p = Vector3::new(1.0, 2.0, 3.0);
    let line: Vec<Vector3<f64>> = (0..5).map(|k| p * k as f64).collect();
    assert!(matches!(umeyama_align(&line, &line, true), Err(MetricsError::Degenerate { .. })));
    assert!(matches!(umeyama_align(&line[..2], &line[..2], false), Err(MetricsError::Degenerate { .. })));
    assert!(matches!(umeyama_align(&[p; 4], &[p; 4], true), Err(MetricsError::Degenerate { .. })));
    assert!(matches!(umeyama_align(&line, &line[..3], true), Err(MetricsError::ShapeMismatch(_))));
}

/// Sum of squared residuals of the best planar map for a fixed angle. A
/// half turn about an in-plane axis acts on the plane as a reflection, so
/// reflected maps are admissible too.
fn planar_cost(p: &[Vector2<f64>], q: &[Vector2<f64>], theta: f64, reflect: bool, with_scale: bool) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    let rot = |v: &Vector2<f64>| {
        let v = if reflect { Vector2::new(v.x, -v.y) } else { *v };
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    };
    let mp = p.iter().sum::<Vector2<f64>>() / p.len() as f64;
    let mq = q.iter().sum::<Vector2<f64>>() / q.len() as f64;
    let (mut cross, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (rot(&(a - mp)), b - mq);
        cross += a.dot(&b);
        pp += a.norm_squared();
        qq += b.norm_squared();
    }
    if with_scale {
        let s = (cross / pp).max(0.0);
        qq - 2.0 * s * cross + s * s * pp
    } else {
        qq + pp - 2.0 * cross
    }
}

fn brute_force_rms(p: &[Vector2<f64>], q: &[Vector2<f64>], with_scale: bool) -> f64 {
    let mut best = f64::INFINITY;
    for reflect in [false, true] {
        let f = |t: f64| planar_cost(p, q, t, reflect, with_scale);
        let steps = 3600;
        let h = 2.0 * PI / steps as f64;
        let k = (0..steps).min_by(|&a, &b| f(a as f64 * h).total_cmp(&f(b as f64 * h))).unwrap();
        // Golden-section search around the best grid cell.
        let (mut lo, mut hi) = ((k as f64 - 1.0) * h, (k as f64 + 1.0) * h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        best = best.min(f(0.5 * (lo + hi)));
    }
    (best.max(0.0) / p.len() as f64).sqrt()
}

#[test]
fn three_point_planar_alignment_matches_brute_force() {
    let mut r = rng(42);
    let mut checked = 0;
    for _ in 0..200 {
        let p: Vec<Vector2<f64>> = (0..3).map(|_| Vector2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        let q: Vec<Vector2<f64>> = (0..3).map(|_| Vector2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        let lift = |v: &[Vector2<f64>]| v.iter().map(|a| Vector3::new(a.x, a.y, 0.0)).collect::<Vec<_>>();
        for with_scale in [false, true] {
            let Ok(a) = umeyama_align(&lift(&p), &lift(&q), with_scale) else {
                continue;
            };
            let oracle = brute_force_rms(&p, &q, with_scale);
            assert!((a.residual_rms - oracle).abs() < 1e-6, "scale {with_scale}: {} vs {oracle}", a.residual_rms);
            checked += 1;
        }
    }
    assert!(checked > 390);
}

#[test]
fn means_ignore_frame_order() {
    let mut r = rng(43);
    for _ in 0..50 {
        let n = r.random_range(2..200);
        let pairs: Vec<(RigidPose, RigidPose)> = (0..n).map(|_| (pose(&mut r, 2.0), pose(&mut r, 2.0))).collect();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut r);
        let split = |v: &[(RigidPose, RigidPose)]| {
            (
                Trajectory::from_poses(10.0, v.iter().map(|p| p.0)).unwrap(),
                Trajectory::from_poses(10.0, v.iter().map(|p| p.1)).unwrap(),
            )
        };
        let (a, b) = (split(&pairs), split(&shuffled));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
        assert!(close(translation_error(&a.0, &a.1).unwrap().mean, translation_error(&b.0, &b.1).unwrap().mean));
        assert!(close(orientation_error(&a.0, &a.1).unwrap().mean, orientation_error(&b.0, &b.1).unwrap().mean));

        let (pred, gt) = structured_pair(&mut r, n.min(30));
        let mut order: Vec<usize> = (0..pred.len()).collect();
        order.shuffle(&mut r);
        let permute = |m: &MotionSequence| motion(order.iter().map(|&i| m.frames()[i]).collect());
        let (pp, pg) = (permute(&pred), permute(&gt));
        assert!(close(mpjpe(&pred, &gt).unwrap().mean, mpjpe(&pp, &pg).unwrap().mean));
        assert!(close(mpjpe_pa(&pred, &gt).unwrap().mean, mpjpe_pa(&pp, &pg).unwrap().mean));
        assert!((mpjpe_rigid(&pred, &gt).unwrap().mean - mpjpe_rigid(&pp, &pg).unwrap().mean).abs() < 1e-6);
    }
}

#[test]
fn errors_are_invariant_under_a_common_rigid_motion() {
    let mut r = rng(44);
    for _ in 0..50 {
        let g = pose(&mut r, 10.0);
        let pred = random_trajectory(&mut r, 40);
        let gt = random_trajectory(&mut r, 40);
        let (mp, mg) = (pred.map_poses(|p| g.compose(p)), gt.map_poses(|p| g.compose(p)));
        let t0 = translation_error(&pred, &gt).unwrap();
        let t1 = translation_error(&mp, &mg).unwrap();
        for (a, b) in t0.per_frame.iter().zip(&t1.per_frame) {
            assert!((a - b).abs() < 1e-8);
        }
        let o0 = orientation_error(&pred, &gt).unwrap();
        let o1 = orientation_error(&mp, &mg).unwrap();
        for (a, b) in o0.per_frame.iter().zip(&o1.per_frame) {
            assert!((a - b).abs() < 1e-12);
        }

        let (pm, gm) = structured_pair(&mut r, 10);
        let moved = |m: &MotionSequence| motion(m.frames().iter().map(|f| transform_frame(f, |p| g.transform_point(p))).collect());
        let (qm, hm) = (moved(&pm), moved(&gm));
        for metric in [mpjpe, mpjpe_rigid, mpjpe_pa] {
            let (a, b) = (metric(&pm, &gm).unwrap(), metric(&qm, &hm).unwrap());
            for (x, y) in a.per_frame.iter().zip(&b.per_frame) {
                assert!((x - y).abs() < 1e-6, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn foot_metrics_ignore_other_joints() {
    let mut r = rng(45);
    let feet = JointLayout::default().foot_joints();
    for _ in 0..100 {
        let n = r.random_range(1..40);
        let frames: Vec<JointFrame> = (0..n)
            .map(|_| {
                let mut f = skeleton(&mut r);
                for &j in &feet {
                    f[j].z = r.random_range(-0.02..0.08);
                }
                f
            })
            .collect();
        let perturbed: Vec<JointFrame> = frames
            .iter()
            .map(|f| {
                let mut f = *f;
                for (j, p) in f.iter_mut().enumerate() {
                    if !feet.contains(&j) {
                        *p += gaussian3(&mut r);
                    }
                }
                f
            })
            .collect();
        let (a, b) = (motion(frames), motion(perturbed));
        let ground = r.random_range(-0.01..0.01);
        assert_eq!(foot_sliding(&a, ground, 0.05), foot_sliding(&b, ground, 0.05));
        assert_eq!(foot_contact(&a, ground), foot_contact(&b, ground));
        assert_eq!(estimate_ground(&a), estimate_ground(&b));
        assert_eq!(foot_sliding(&a, ground, 0.05).per_frame.len(), n - 1);
    }
}

#[test]
fn foot_sliding_weights() {
    let layout = JointLayout::default();
    let at = |x: f64, z: f64| -> JointFrame {
        let mut f = [Vector3::new(0.0, 0.0, 1.0); JOINTS];
        f[layout.left_foot] = Vector3::new(x, 0.0, z);
        f
    };
    // Every other joint stays 1 m up, so only the left foot can slide.
    let m = motion(vec![at(0.0, 0.0), at(0.1, 0.0), at(0.2, 0.025), at(0.3, 0.06)]);
    let fs = foot_sliding(&m, 0.0, 0.05);
    // Weights 1, 2 − √2 and 0 for heights 0, H/2 and above H.
    let expected = [100.0, 100.0 * (2.0 - 2f64.sqrt()), 0.0];
    for (a, b) in fs.per_frame.iter().zip(expected) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let fc = foot_contact(&m, 0.0);
    assert!((fc.per_frame[2] - 25.0).abs() < 1e-9);
}
