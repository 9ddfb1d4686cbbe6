//! Anchor-pinned trajectory refinement and yaw-only canonicalization.
//!
//! For consecutive anchors `n < m` the SLAM segment is first aligned to the
//! world at `n`:
//!
//! ```text
//! S   = A_n · slam_n⁻¹
//! E   = A_m · (S · slam_m)⁻¹
//! P_t = exp(α_t · log E) · S · slam_t,     α_t = (t − n) / (m − n)
//! ```
//!
//! so that `P_n = A_n`, `P_m = A_m`, and in between the SLAM shape is kept
//! while the end-point residual is spread along the Sim(3) geodesic.
//!
//! Camera poses have no scale of their own. In [`ScaleMode::AnchorDistanceRatio`]
//! the alignment `S` rescales SLAM positions by the anchor-to-SLAM baseline
//! ratio; the scale carried by `S · slam_t` is a gauge and is dropped both
//! when forming `E` and when emitting poses.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::geom::{
    embed_rigid, project_rigid, sim3_exp, sim3_log, sim3_log_unchecked, GeomError, RigidPose, Rotation,
    SimTransform, DEFAULT_SCALE_TOLERANCE,
};
use crate::trajio::{AnchorCandidate, Frame, TrajIoError, Trajectory};

/// SLAM baselines shorter than this cannot carry a scale ratio.
pub const MIN_BASELINE: f64 = 1e-6;

/// Horizontal forward components below this make the heading undefined.
pub const MIN_HORIZONTAL_FORWARD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] TrajIoError),
    #[error("no reliable anchors")]
    NoAnchors,
    #[error("degenerate baseline between frames {start} and {end}: {what} distance {distance} m")]
    DegenerateBaseline { start: u64, end: u64, what: &'static str, distance: f64 },
    #[error("SLAM trajectory has no pose for frame {frame}")]
    Gap { frame: u64 },
    #[error("interval [{start}, {end}] is empty or reversed")]
    InvalidInterval { start: u64, end: u64 },
    #[error("residual rotation of interval [{start}, {end}] is at the cut locus ({angle} rad)")]
    CutLocus { start: u64, end: u64, angle: f64 },
    #[error("first pose looks along gravity; heading is undefined")]
    DegenerateHeading,
}

pub type Result<T> = std::result::Result<T, RefineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScaleMode {
    /// Alignment and residual are rigid, exactly as the products of SE(3) poses.
    #[default]
    #[serde(rename = "unit")]
    Unit,
    /// Alignment scale is the anchor baseline over the SLAM baseline.
    #[serde(rename = "ratio", alias = "anchor-distance-ratio")]
    AnchorDistanceRatio,
}

/// Frames outside the anchored range keep the nearest interval's alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExtrapolationMode {
    #[default]
    #[serde(rename = "hold-alignment")]
    HoldAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CutLocusPolicy {
    #[serde(rename = "error")]
    Error,
    /// Insert a pseudo-anchor halfway along the residual and retry once.
    #[default]
    #[serde(rename = "split")]
    SplitInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub scale_mode: ScaleMode,
    pub extrapolation_mode: ExtrapolationMode,
    pub log_cut_locus_policy: CutLocusPolicy,
}

fn gauge_free(t: &SimTransform) -> SimTransform {
    // Unit scale and the stored rotation/translation; cannot fail.
    embed_rigid(&project_rigid(t, DEFAULT_SCALE_TOLERANCE, true).expect("forced projection"))
}

fn to_pose(t: &SimTransform) -> RigidPose {
    project_rigid(t, DEFAULT_SCALE_TOLERANCE, true).expect("forced projection")
}

/// Alignment `S` taking the SLAM frame to the world frame at the start anchor.
///
/// `ends` holds `(anchor_end, slam_end)` and is required in ratio mode.
pub fn compute_alignment(
    anchor_start: &RigidPose,
    slam_start: &RigidPose,
    config: &RefineConfig,
    ends: Option<(&RigidPose, &RigidPose)>,
) -> Result<SimTransform> {
    let slam_inv = embed_rigid(slam_start).inverse();
    match config.scale_mode {
        ScaleMode::Unit => Ok(embed_rigid(anchor_start).compose(&slam_inv)),
        ScaleMode::AnchorDistanceRatio => {
            let (anchor_end, slam_end) = ends.ok_or_else(|| {
                GeomError::InvalidArgument("ratio scale mode needs both end poses".into())
            })?;
            let slam_base = (slam_end.translation - slam_start.translation).norm();
            let anchor_base = (anchor_end.translation - anchor_start.translation).norm();
            if !(slam_base >= MIN_BASELINE) {
                return Err(RefineError::DegenerateBaseline { start: 0, end: 0, what: "SLAM", distance: slam_base });
            }
            if !(anchor_base >= MIN_BASELINE) {
                return Err(RefineError::DegenerateBaseline {
                    start: 0,
                    end: 0,
                    what: "anchor",
                    distance: anchor_base,
                });
            }
            let scale = SimTransform::from_scale(anchor_base / slam_base)?;
            Ok(embed_rigid(anchor_start).compose(&scale).compose(&slam_inv))
        }
    }
}

/// Residual `E` with `E · S · slam_end = anchor_end` (as camera poses).
pub fn compute_residual(anchor_end: &RigidPose, s: &SimTransform, slam_end: &RigidPose) -> SimTransform {
    let propagated = gauge_free(&s.compose(&embed_rigid(slam_end)));
    embed_rigid(anchor_end).compose(&propagated.inverse())
}

/// Refined poses of one anchor interval together with the alignments that
/// hold at either end.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSolution {
    pub start_frame: u64,
    pub end_frame: u64,
    /// Poses for frames `start_frame..=end_frame`.
    pub poses: Vec<RigidPose>,
    /// `S` of the first sub-interval.
    pub start_alignment: SimTransform,
    /// `E · S` of the last sub-interval.
    pub end_alignment: SimTransform,
}

fn slam_segment(slam: &Trajectory, start: u64, end: u64) -> Result<&[Frame]> {
    let first = slam.position_of(start).ok_or(RefineError::Gap { frame: start })?;
    let len = (end - start) as usize + 1;
    let frames = slam.frames();
    for k in 0..len {
        match frames.get(first + k) {
            Some(f) if f.index == start + k as u64 => {}
            _ => return Err(RefineError::Gap { frame: start + k as u64 }),
        }
    }
    Ok(&frames[first..first + len])
}

pub fn interpolate_interval(
    anchor_n: &AnchorCandidate,
    anchor_m: &AnchorCandidate,
    slam: &Trajectory,
    config: &RefineConfig,
) -> Result<IntervalSolution> {
    interpolate_poses(&anchor_n.pose, anchor_n.frame_index, &anchor_m.pose, anchor_m.frame_index, slam, config, true)
}

fn interpolate_poses(
    a_n: &RigidPose,
    n: u64,
    a_m: &RigidPose,
    m: u64,
    slam: &Trajectory,
    config: &RefineConfig,
    may_split: bool,
) -> Result<IntervalSolution> {
    if m <= n {
        return Err(RefineError::InvalidInterval { start: n, end: m });
    }
    let segment = slam_segment(slam, n, m)?;
    let slam_n = &segment[0].pose;
    let slam_m = &segment[segment.len() - 1].pose;
    let s = compute_alignment(a_n, slam_n, config, Some((a_m, slam_m))).map_err(|e| match e {
        RefineError::DegenerateBaseline { what, distance, .. } => {
            RefineError::DegenerateBaseline { start: n, end: m, what, distance }
        }
        other => other,
    })?;
    let e = compute_residual(a_m, &s, slam_m);
    let log_e = match sim3_log(&e) {
        Ok(xi) => xi,
        Err(GeomError::CutLocus { angle }) => {
            if config.log_cut_locus_policy == CutLocusPolicy::Error || !may_split || m - n < 2 {
                return Err(RefineError::CutLocus { start: n, end: m, angle });
            }
            return split_interval(a_n, n, a_m, m, &s, &e, slam, config);
        }
        Err(other) => return Err(other.into()),
    };
    let span = (m - n) as f64;
    let mut poses = Vec::with_capacity(segment.len());
    for f in segment {
        let alpha = (f.index - n) as f64 / span;
        let step = sim3_exp(&log_e.scaled(alpha))?;
        poses.push(to_pose(&step.compose(&s).compose(&embed_rigid(&f.pose))));
    }
    Ok(IntervalSolution { start_frame: n, end_frame: m, poses, start_alignment: s, end_alignment: e.compose(&s) })
}

#[allow(clippy::too_many_arguments)]
fn split_interval(
    a_n: &RigidPose,
    n: u64,
    a_m: &RigidPose,
    m: u64,
    s: &SimTransform,
    e: &SimTransform,
    slam: &Trajectory,
    config: &RefineConfig,
) -> Result<IntervalSolution> {
    let mid = n + (m - n) / 2;
    let half = sim3_exp(&sim3_log_unchecked(e).scaled(0.5))?;
    let slam_mid = slam.pose_at(mid).ok_or(RefineError::Gap { frame: mid })?;
    let pseudo = to_pose(&half.compose(s).compose(&embed_rigid(slam_mid)));
    warn!("residual of interval [{n}, {m}] is a half turn; splitting at frame {mid}");
    let first = interpolate_poses(a_n, n, &pseudo, mid, slam, config, false)?;
    let second = interpolate_poses(&pseudo, mid, a_m, m, slam, config, false)?;
    let mut poses = first.poses;
    poses.extend_from_slice(&second.poses[1..]);
    Ok(IntervalSolution {
        start_frame: n,
        end_frame: m,
        poses,
        start_alignment: first.start_alignment,
        end_alignment: second.end_alignment,
    })
}

fn check_dense(slam: &Trajectory) -> Result<()> {
    for w in slam.frames().windows(2) {
        if w[1].index != w[0].index + 1 {
            return Err(RefineError::Gap { frame: w[0].index + 1 });
        }
    }
    Ok(())
}

/// Refines every SLAM frame against the accepted anchors.
///
/// Anchor frames receive the anchor pose itself so that neighbouring
/// intervals agree exactly; interior frames follow the interpolation, and
/// frames outside the anchored range keep the adjacent alignment.
pub fn refine_trajectory(anchors: &AnchorSet, slam: &Trajectory, config: &RefineConfig) -> Result<Trajectory> {
    let list = anchors.anchors();
    if list.is_empty() {
        return Err(RefineError::NoAnchors);
    }
    check_dense(slam)?;
    for a in list {
        if slam.position_of(a.frame_index).is_none() {
            return Err(RefineError::Gap { frame: a.frame_index });
        }
    }

    let intervals: Vec<IntervalSolution> = list
        .par_windows(2)
        .map(|w| interpolate_interval(&w[0], &w[1], slam, config))
        .collect::<Result<_>>()?;

    let (head_alignment, tail_alignment) = match (intervals.first(), intervals.last()) {
        (Some(first), Some(last)) => (first.start_alignment, last.end_alignment),
        _ => {
            let a = &list[0];
            if config.scale_mode == ScaleMode::AnchorDistanceRatio {
                warn!("a single anchor cannot fix scale; using unit scale");
            }
            let unit = RefineConfig { scale_mode: ScaleMode::Unit, ..*config };
            let slam_pose = slam.pose_at(a.frame_index).expect("checked above");
            let s = compute_alignment(&a.pose, slam_pose, &unit, None)?;
            (s, s)
        }
    };

    let first_anchor = list[0].frame_index;
    let last_anchor = list[list.len() - 1].frame_index;
    let mut frames = Vec::with_capacity(slam.len());
    let mut next_interval = 0;
    let mut next_anchor = 0;
    for f in slam.frames() {
        let t = f.index;
        let pose = if next_anchor < list.len() && list[next_anchor].frame_index == t {
            next_anchor += 1;
            list[next_anchor - 1].pose
        } else if t < first_anchor {
            to_pose(&head_alignment.compose(&embed_rigid(&f.pose)))
        } else if t > last_anchor {
            to_pose(&tail_alignment.compose(&embed_rigid(&f.pose)))
        } else {
            while intervals[next_interval].end_frame < t {
                next_interval += 1;
            }
            let iv = &intervals[next_interval];
            iv.poses[(t - iv.start_frame) as usize]
        };
        frames.push(Frame { index: t, pose });
    }
    Ok(Trajectory::new(slam.fps(), frames)?)
}

/// World-from-canonical transform: a rotation about +z plus a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalizationTransform {
    pub world_from_canonical: RigidPose,
}

#[derive(Serialize, Deserialize)]
struct CanonicalizationJson {
    format_version: u32,
    yaw: f64,
    translation: [f64; 3],
    rotation_wxyz: [f64; 4],
}

impl CanonicalizationTransform {
    pub fn identity() -> Self {
        Self { world_from_canonical: RigidPose::identity() }
    }

    pub fn yaw(&self) -> f64 {
        let q = self.world_from_canonical.rotation.wxyz();
        2.0 * q[3].atan2(q[0])
    }

    pub fn to_json(&self) -> serde_json::Value {
        let t = self.world_from_canonical.translation;
        serde_json::to_value(CanonicalizationJson {
            format_version: crate::trajio::FORMAT_VERSION,
            yaw: self.yaw(),
            translation: [t.x, t.y, t.z],
            rotation_wxyz: self.world_from_canonical.rotation.wxyz(),
        })
        .expect("plain numbers serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let j: CanonicalizationJson =
            serde_json::from_value(value.clone()).map_err(|e| RefineError::Io(TrajIoError::Json(e)))?;
        let [w, x, y, z] = j.rotation_wxyz;
        let rotation = Rotation::from_wxyz(w, x, y, z)?;
        if x.abs() > 1e-9 || y.abs() > 1e-9 {
            return Err(GeomError::InvalidArgument("canonicalization rotation must be about +z".into()).into());
        }
        let [tx, ty, tz] = j.translation;
        Ok(Self { world_from_canonical: RigidPose::new(rotation, nalgebra::Vector3::new(tx, ty, tz)) })
    }
}

/// Re-expresses `traj` so the first frame sits at the origin with its
/// horizontal forward direction along +x. Only yaw is removed, so gravity
/// keeps pointing along −z.
pub fn canonicalize(traj: &Trajectory) -> Result<(Trajectory, CanonicalizationTransform)> {
    let first = traj.frames().first().ok_or_else(|| {
        GeomError::InvalidArgument("cannot canonicalize an empty trajectory".into())
    })?;
    let forward = first.pose.forward();
    let horizontal = forward.xy().norm();
    if horizontal < MIN_HORIZONTAL_FORWARD {
        return Err(RefineError::DegenerateHeading);
    }
    let yaw = forward.y.atan2(forward.x);
    let xf = CanonicalizationTransform {
        world_from_canonical: RigidPose::new(Rotation::from_yaw(yaw), first.pose.translation),
    };
    let canonical_from_world = xf.world_from_canonical.inverse();
    Ok((traj.map_poses(|p| canonical_from_world.compose(p)), xf))
}

pub fn uncanonicalize(traj: &Trajectory, xf: &CanonicalizationTransform) -> Trajectory {
    traj.map_poses(|p| xf.world_from_canonical.compose(p))
}

/// Yaw in `(-π, π]` of a pose's horizontal forward direction.
pub fn heading(pose: &RigidPose) -> f64 {
    let f = pose.forward();
    let yaw = f.y.atan2(f.x);
    if yaw <= -PI {
        yaw + 2.0 * PI
    } else {
        yaw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{so3_exp, SimTangent};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        RigidPose::new(so3_exp(&w).unwrap(), t)
    }

    fn close(a: &RigidPose, b: &RigidPose, tol: f64) -> bool {
        (a.translation - b.translation).norm() < tol && a.rotation.quaternion_distance(&b.rotation) < tol
    }

    fn cand(frame: u64, pose: RigidPose) -> AnchorCandidate {
        AnchorCandidate { frame_index: frame, pose, inlier_count: 1000, inlier_ratio: 0.9 }
    }

    #[test]
    fn alignment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RefineConfig::default();
        let p = random_pose(&mut rng);
        let s = compute_alignment(&p, &p, &cfg, None).unwrap();
        assert!(close(&to_pose(&s), &RigidPose::identity(), 1e-12));
        let s = compute_alignment(&p, &RigidPose::identity(), &cfg, None).unwrap();
        assert_eq!(s, embed_rigid(&p));
        for _ in 0..20 {
            let a = random_pose(&mut rng);
            let sl = random_pose(&mut rng);
            let s = compute_alignment(&a, &sl, &cfg, None).unwrap();
            assert!(close(&to_pose(&s.compose(&embed_rigid(&sl))), &a, 1e-12));
        }
    }

    #[test]
    fn ratio_alignment_keeps_start_and_sets_scale() {
        let cfg = RefineConfig { scale_mode: ScaleMode::AnchorDistanceRatio, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a0, a1, s0, s1) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        let s = compute_alignment(&a0, &s0, &cfg, Some((&a1, &s1))).unwrap();
        let ratio = (a1.translation - a0.translation).norm() / (s1.translation - s0.translation).norm();
        assert!((s.scale() - ratio).abs() < 1e-12);
        assert!(close(&to_pose(&s.compose(&embed_rigid(&s0))), &a0, 1e-12));
        // Distances between propagated positions are rescaled by the ratio.
        let d = (s.transform_point(&s1.translation) - s.transform_point(&s0.translation)).norm();
        assert!((d - (a1.translation - a0.translation).norm()).abs() < 1e-12);

        assert!(compute_alignment(&a0, &s0, &cfg, None).is_err());
        assert!(matches!(
            compute_alignment(&a0, &s0, &cfg, Some((&a1, &s0))),
            Err(RefineError::DegenerateBaseline { what: "SLAM", .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_pose(&mut rng);
        let e = compute_residual(&a, &SimTransform::identity(), &RigidPose::identity());
        assert!(close(&to_pose(&e), &a, 1e-15));
        for _ in 0..20 {
            let (a_end, sl_end, a0, sl0) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let s = compute_alignment(&a0, &sl0, &RefineConfig::default(), None).unwrap();
            let e = compute_residual(&a_end, &s, &sl_end);
            assert!(close(&to_pose(&e.compose(&s).compose(&embed_rigid(&sl_end))), &a_end, 1e-12));
            // drift-free segment
            let consistent = to_pose(&s.compose(&embed_rigid(&sl_end)));
            let e = compute_residual(&consistent, &s, &sl_end);
            assert!(sim3_log(&e).unwrap().norm() < 1e-12);
        }
    }

    fn slam_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let mut pose = RigidPose::identity();
        let poses: Vec<_> = (0..n)
            .map(|_| {
                let step = RigidPose::new(
                    so3_exp(&Vector3::new(0.0, 0.0, rng.random_range(-0.05..0.05))).unwrap(),
                    Vector3::new(0.05, rng.random_range(-0.01..0.01), 0.0),
                );
                pose = pose.compose(&step);
                pose
            })
            .collect();
        Trajectory::from_poses(10.0, poses).unwrap()
    }

    #[test]
    fn identity_residual_is_pure_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let slam = slam_traj(&mut rng, 30);
        let g = random_pose(&mut rng);
        let world = |i: usize| g.compose(&slam.frames()[i].pose);
        let sol = interpolate_interval(&cand(3, world(3)), &cand(25, world(25)), &slam, &RefineConfig::default())
            .unwrap();
        for (k, p) in sol.poses.iter().enumerate() {
            assert!(close(p, &world(3 + k), 1e-9));
        }
    }

    #[test]
    fn cut_locus_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let slam = slam_traj(&mut rng, 21);
        let a0 = slam.frames()[0].pose;
        // End anchor rotated by a half turn about the vertical through the SLAM end.
        let end = slam.frames()[20].pose;
        let flip = RigidPose::new(Rotation::from_yaw(PI), Vector3::zeros());
        let a1 = RigidPose::new(flip.rotation.compose(&end.rotation), end.translation);
        let strict = RefineConfig { log_cut_locus_policy: CutLocusPolicy::Error, ..Default::default() };
        assert!(matches!(
            interpolate_interval(&cand(0, a0), &cand(20, a1), &slam, &strict),
            Err(RefineError::CutLocus { .. })
        ));
        let sol = interpolate_interval(&cand(0, a0), &cand(20, a1), &slam, &RefineConfig::default()).unwrap();
        assert_eq!(sol.poses.len(), 21);
        assert!(close(&sol.poses[0], &a0, 1e-9));
        assert!(close(&sol.poses[20], &a1, 1e-9));
        // Halfway the heading has turned by a quarter.
        let turned = heading(&sol.poses[10]) - heading(&slam.frames()[10].pose);
        let turned = (turned + 3.0 * PI).rem_euclid(2.0 * PI) - PI;
        assert!((turned.abs() - FRAC_PI_2).abs() < 1e-6, "{turned}");
    }

    #[test]
    fn interval_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let slam = slam_traj(&mut rng, 10);
        let p = RigidPose::identity();
        let cfg = RefineConfig::default();
        assert!(matches!(interpolate_interval(&cand(5, p), &cand(5, p), &slam, &cfg), Err(RefineError::InvalidInterval { .. })));
        assert!(matches!(interpolate_interval(&cand(5, p), &cand(12, p), &slam, &cfg), Err(RefineError::Gap { frame: 10 })));
    }

    #[test]
    fn refine_requires_anchors_and_dense_slam() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let slam = slam_traj(&mut rng, 10);
        assert!(matches!(
            refine_trajectory(&AnchorSet::default(), &slam, &RefineConfig::default()),
            Err(RefineError::NoAnchors)
        ));
        let mut frames = slam.frames().to_vec();
        frames.remove(4);
        let gappy = Trajectory::new(10.0, frames).unwrap();
        let set = AnchorSet::from_sorted(vec![cand(0, RigidPose::identity())]).unwrap();
        assert!(matches!(refine_trajectory(&set, &gappy, &RefineConfig::default()), Err(RefineError::Gap { frame: 4 })));
    }

    #[test]
    fn single_anchor_at_origin_reproduces_world_slam() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let slam = slam_traj(&mut rng, 15);
        let set = AnchorSet::from_sorted(vec![cand(0, slam.frames()[0].pose)]).unwrap();
        for scale_mode in [ScaleMode::Unit, ScaleMode::AnchorDistanceRatio] {
            let cfg = RefineConfig { scale_mode, ..Default::default() };
            let out = refine_trajectory(&set, &slam, &cfg).unwrap();
            for (a, b) in out.poses().zip(slam.poses()) {
                assert!(close(a, b, 1e-12));
            }
        }
    }

    #[test]
    fn canonicalize_examples() {
        let p0 = RigidPose::new(Rotation::from_yaw(FRAC_PI_2), Vector3::new(1.0, 2.0, 0.0));
        let p1 = RigidPose::new(Rotation::from_yaw(FRAC_PI_2), Vector3::new(1.0, 3.0, 0.5));
        let traj = Trajectory::from_poses(10.0, [p0, p1]).unwrap();
        let (canon, xf) = canonicalize(&traj).unwrap();
        assert!((xf.yaw() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(xf.world_from_canonical.translation, Vector3::new(1.0, 2.0, 0.0));
        let c0 = &canon.frames()[0].pose;
        assert_eq!(c0.translation, Vector3::zeros());
        assert!((c0.forward() - Vector3::x()).norm() < 1e-15);
        // Second frame was one meter along world +y, i.e. straight ahead.
        assert!((canon.frames()[1].pose.translation - Vector3::new(1.0, 0.0, 0.5)).norm() < 1e-15);

        let back = uncanonicalize(&canon, &xf);
        for (a, b) in back.poses().zip(traj.poses()) {
            assert!(close(a, b, 1e-12));
        }

        let (again, id) = canonicalize(&canon).unwrap();
        assert!(close(&id.world_from_canonical, &RigidPose::identity(), 1e-15));
        assert_eq!(again, canon);
    }

    #[test]
    fn canonicalize_keeps_gravity_and_rejects_vertical_gaze() {
        let down = so3_exp(&Vector3::new(0.0, FRAC_PI_2, 0.0)).unwrap();
        let traj = Trajectory::from_poses(10.0, [RigidPose::new(down, Vector3::zeros())]).unwrap();
        assert!(matches!(canonicalize(&traj), Err(RefineError::DegenerateHeading)));

        let tilted = Rotation::from_yaw(0.7).compose(&so3_exp(&Vector3::new(0.0, 0.4, 0.0)).unwrap());
        let traj = Trajectory::from_poses(10.0, [RigidPose::new(tilted, Vector3::new(3.0, -1.0, 1.4))]).unwrap();
        let (canon, xf) = canonicalize(&traj).unwrap();
        let q = xf.world_from_canonical.rotation.wxyz();
        assert!(q[1].abs() < 1e-15 && q[2].abs() < 1e-15);
        // Pitch survives canonicalization.
        let f = canon.frames()[0].pose.forward();
        assert!(f.y.abs() < 1e-12 && f.x > 0.0);
        assert!((f.z - tilted.rotate(&Vector3::x()).z).abs() < 1e-12);
        assert!(canonicalize(&Trajectory::empty(10.0).unwrap()).is_err());
    }

    #[test]
    fn uncanonicalize_matches_matrix_arithmetic() {
        let xf = CanonicalizationTransform {
            world_from_canonical: RigidPose::new(Rotation::from_yaw(0.3), Vector3::new(0.5, -1.0, 0.0)),
        };
        let p = RigidPose::new(so3_exp(&Vector3::new(0.1, 0.2, 0.3)).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        let traj = Trajectory::from_poses(10.0, [p]).unwrap();
        let out = uncanonicalize(&traj, &xf).frames()[0].pose;
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rz = nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((out.rotation.matrix() - rz * p.rotation.matrix()).norm() < 1e-14);
        assert!((out.translation - (rz * p.translation + Vector3::new(0.5, -1.0, 0.0))).norm() < 1e-14);

        let t = RigidPose::from_translation(Vector3::new(1.0, 1.0, 1.0));
        let moved = uncanonicalize(&traj, &CanonicalizationTransform { world_from_canonical: t });
        assert_eq!(moved.frames()[0].pose.translation, p.translation + Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(uncanonicalize(&traj, &CanonicalizationTransform::identity()), traj);
    }

    #[test]
    fn transform_json_roundtrip() {
        let xf = CanonicalizationTransform {
            world_from_canonical: RigidPose::new(Rotation::from_yaw(-2.1), Vector3::new(0.5, -1.0, 0.25)),
        };
        let back = CanonicalizationTransform::from_json(&xf.to_json()).unwrap();
        assert_eq!(back, xf);
    }

    #[test]
    fn tangent_scaling_is_left_distributed() {
        // exp(α log E) at α = 1 reproduces E.
        let xi = SimTangent::from_array([0.1, -0.2, 0.3, 1.0, 2.0, -0.5, 0.2]);
        let e = sim3_exp(&xi).unwrap();
        let back = sim3_exp(&sim3_log(&e).unwrap().scaled(1.0)).unwrap();
        assert!((back.matrix() - e.matrix()).norm() < 1e-12);
    }
}
