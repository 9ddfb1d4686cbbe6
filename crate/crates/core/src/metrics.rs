//! Trajectory and body-motion error metrics.
//!
//! Lengths are computed in meters and converted to millimeters only in the
//! returned values. Orientation error is the Frobenius norm of the rotation
//! matrix difference and has no unit.
//!
//! Means use pairwise summation, so results do not depend on how per-frame
//! work is scheduled.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rotation;
use crate::trajio::{JointFrame, MotionSequence, Trajectory};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const MM: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("frame sets differ; missing from prediction: {missing_in_pred:?}, missing from ground truth: {missing_in_gt:?}")]
    FrameMismatch { missing_in_pred: Vec<u64>, missing_in_gt: Vec<u64> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate point configuration{}: {reason}", frame.map(|f| format!(" in frame {f}")).unwrap_or_default())]
    Degenerate { frame: Option<u64>, reason: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl Series {
    fn new(per_frame: Vec<f64>) -> Self {
        let mean = mean(&per_frame);
        Self { per_frame, mean }
    }
}

fn match_frames(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    let p: Vec<u64> = pred.indices().collect();
    let g: Vec<u64> = gt.indices().collect();
    if p == g {
        return Ok(());
    }
    let missing = |a: &[u64], b: &[u64]| -> Vec<u64> { b.iter().filter(|i| a.binary_search(i).is_err()).copied().collect() };
    Err(MetricsError::FrameMismatch { missing_in_pred: missing(&p, &g), missing_in_gt: missing(&g, &p) })
}

/// Per-frame translation distance, millimeters.
pub fn translation_error(pred: &Trajectory, gt: &Trajectory) -> Result<Series> {
    match_frames(pred, gt)?;
    let per_frame = pred.poses().zip(gt.poses()).map(|(p, g)| (p.translation - g.translation).norm() * MM).collect();
    Ok(Series::new(per_frame))
}

pub fn rotation_matrix_distance(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Per-frame `‖R_pred − R_gt‖_F`.
pub fn orientation_error(pred: &Trajectory, gt: &Trajectory) -> Result<Series> {
    match_frames(pred, gt)?;
    let per_frame = pred.poses().zip(gt.poses()).map(|(p, g)| rotation_matrix_distance(&p.rotation, &g.rotation)).collect();
    Ok(Series::new(per_frame))
}

fn check_shapes(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.layout() != gt.layout() {
        return Err(MetricsError::ShapeMismatch("joint layouts differ".into()));
    }
    Ok(())
}

fn joint_error_mm(pred: &JointFrame, gt: &JointFrame) -> f64 {
    let d: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).collect();
    mean(&d) * MM
}

/// Mean per-joint position error per frame, millimeters.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<Series> {
    check_shapes(pred, gt)?;
    let per_frame = pred.frames().par_iter().zip(gt.frames()).map(|(p, g)| joint_error_mm(p, g)).collect();
    Ok(Series::new(per_frame))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// RMS of `dst − (s·R·src + t)`, meters.
    pub residual_rms: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.rotate(p) + self.translation
    }
}

fn degenerate(reason: impl Into<String>) -> MetricsError {
    MetricsError::Degenerate { frame: None, reason: reason.into() }
}

/// Least-squares similarity (or rigid, without scale) alignment taking `src`
/// onto `dst`, with the reflection case folded into a proper rotation.
pub fn umeyama_align(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<AlignmentResult> {
    if src.len() != dst.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    let n = src.len();
    if n < 3 {
        return Err(degenerate(format!("need at least 3 point pairs, got {n}")));
    }
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        cov += (d - mu_d) * sc.transpose();
        scatter += sc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= nf;
    var_s /= nf;

    let sv = scatter.singular_values();
    let (s_max, s_mid) = (sv.max(), {
        let mut v = [sv[0], sv[1], sv[2]];
        v.sort_by(f64::total_cmp);
        v[1]
    });
    if !(s_max > 0.0) || s_mid <= 1e-12 * s_max {
        return Err(degenerate("source points are collinear or coincident"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V"));
    let mut d = svd.singular_values;
    let mut sorted = [d[0], d[1], d[2]];
    sorted.sort_by(f64::total_cmp);
    if !(sorted[2] > 0.0) || sorted[1] <= 1e-12 * sorted[2] {
        return Err(degenerate("cross-covariance is rank deficient"));
    }
    // Flip the axis of the smallest singular value when U·Vᵀ is a reflection.
    let mut sign = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let k = d.imin();
        sign[(k, k)] = -1.0;
        d[k] = -d[k];
    }
    let r = u * sign * v_t;
    let scale = if with_scale { d.sum() / var_s } else { 1.0 };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(degenerate(format!("non-positive scale {scale}")));
    }
    let rotation = Rotation::from_matrix(&r).map_err(|e| degenerate(e.to_string()))?;
    let translation = mu_d - scale * (rotation.matrix() * mu_s);
    let mut result = AlignmentResult { rotation, translation, scale, residual_rms: 0.0 };
    let sq: Vec<f64> = src.iter().zip(dst).map(|(s, d)| (d - result.apply(s)).norm_squared()).collect();
    result.residual_rms = mean(&sq).sqrt();
    Ok(result)
}

/// MPJPE after one rigid alignment shared by the whole sequence.
pub fn mpjpe_rigid(pred: &MotionSequence, gt: &MotionSequence) -> Result<Series> {
    check_shapes(pred, gt)?;
    let src: Vec<Vector3<f64>> = pred.frames().iter().flatten().copied().collect();
    let dst: Vec<Vector3<f64>> = gt.frames().iter().flatten().copied().collect();
    let align = umeyama_align(&src, &dst, false)?;
    let per_frame = pred
        .frames()
        .par_iter()
        .zip(gt.frames())
        .map(|(p, g)| {
            let aligned: Vec<Vector3<f64>> = p.iter().map(|x| align.apply(x)).collect();
            let d: Vec<f64> = aligned.iter().zip(g).map(|(a, b)| (a - b).norm()).collect();
            mean(&d) * MM
        })
        .collect();
    Ok(Series::new(per_frame))
}

/// MPJPE after a per-frame similarity (Procrustes) alignment.
pub fn mpjpe_pa(pred: &MotionSequence, gt: &MotionSequence) -> Result<Series> {
    check_shapes(pred, gt)?;
    let per_frame = pred
        .frames()
        .par_iter()
        .zip(gt.frames())
        .zip(pred.indices())
        .map(|((p, g), &index)| {
            let align = umeyama_align(p, g, true).map_err(|e| match e {
                MetricsError::Degenerate { reason, .. } => MetricsError::Degenerate { frame: Some(index), reason },
                other => other,
            })?;
            let d: Vec<f64> = p.iter().zip(g).map(|(a, b)| (align.apply(a) - b).norm()).collect();
            Ok(mean(&d) * MM)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Series::new(per_frame))
}

/// Foot sliding per frame transition, millimeters.
///
/// For every foot/toe joint whose height above `ground_z` stays below
/// `height_threshold` in both frames of a transition, the horizontal
/// displacement is accumulated with weight `2 − 2^(h/H)`, where `h` is the
/// larger of the two heights (clamped at 0, so penetration weighs 1).
pub fn foot_sliding(motion: &MotionSequence, ground_z: f64, height_threshold: f64) -> Series {
    let feet = motion.layout().foot_joints();
    let per_transition = motion
        .frames()
        .windows(2)
        .map(|w| {
            let contributions: Vec<f64> = feet
                .iter()
                .map(|&j| {
                    let (a, b) = (w[0][j], w[1][j]);
                    let h = (a.z.max(b.z) - ground_z).max(0.0);
                    if h < height_threshold {
                        let weight = 2.0 - 2f64.powf(h / height_threshold);
                        weight * (b - a).xy().norm()
                    } else {
                        0.0
                    }
                })
                .collect();
            pairwise_sum(&contributions) * MM
        })
        .collect();
    Series::new(per_transition)
}

/// Per-frame `|lowest foot joint height − ground_z|`, millimeters.
pub fn foot_contact(motion: &MotionSequence, ground_z: f64) -> Series {
    let feet = motion.layout().foot_joints();
    let per_frame = motion
        .frames()
        .iter()
        .map(|f| {
            let lowest = feet.iter().map(|&j| f[j].z).fold(f64::INFINITY, f64::min);
            (lowest - ground_z).abs() * MM
        })
        .collect();
    Series::new(per_frame)
}

/// 5th percentile of all foot-joint heights (nearest rank).
pub fn estimate_ground(motion: &MotionSequence) -> Option<f64> {
    let feet = motion.layout().foot_joints();
    let mut heights: Vec<f64> = motion.frames().iter().flat_map(|f| feet.iter().map(move |&j| f[j].z)).collect();
    if heights.is_empty() {
        return None;
    }
    heights.sort_by(f64::total_cmp);
    let rank = ((0.05 * heights.len() as f64).ceil() as usize).max(1);
    Some(heights[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ground_z: f64,
    /// Replace `ground_z` by the 5th percentile of ground-truth foot heights.
    pub estimate_ground: bool,
    pub fs_height_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ground_z: 0.0, estimate_ground: false, fs_height_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionMetrics {
    pub mpjpe_mm: Series,
    pub mpjpe_rigid_mm: Series,
    pub mpjpe_pa_mm: Series,
    pub fs_mm: Series,
    pub fc_mm: Series,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: Vec<u64>,
    pub t_neck_mm: Series,
    pub o_neck: Series,
    pub ground_z: f64,
    pub motion: Option<MotionMetrics>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    schema_version: u32,
    t_neck_mm: f64,
    o_neck: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_rigid_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_pa_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fs_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fc_mm: Option<f64>,
    ground_z: f64,
    per_frame: PerFrameJson<'a>,
}

#[derive(Serialize)]
struct PerFrameJson<'a> {
    frames: &'a [u64],
    t_neck_mm: &'a [f64],
    o_neck: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_mm: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_rigid_mm: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpjpe_pa_mm: Option<&'a [f64]>,
    /// One value per frame transition.
    #[serde(skip_serializing_if = "Option::is_none")]
    fs_mm: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fc_mm: Option<&'a [f64]>,
}

impl MetricsReport {
    pub fn to_json(&self) -> serde_json::Value {
        let m = self.motion.as_ref();
        let json = ReportJson {
            schema_version: REPORT_SCHEMA_VERSION,
            t_neck_mm: self.t_neck_mm.mean,
            o_neck: self.o_neck.mean,
            mpjpe_mm: m.map(|m| m.mpjpe_mm.mean),
            mpjpe_rigid_mm: m.map(|m| m.mpjpe_rigid_mm.mean),
            mpjpe_pa_mm: m.map(|m| m.mpjpe_pa_mm.mean),
            fs_mm: m.map(|m| m.fs_mm.mean),
            fc_mm: m.map(|m| m.fc_mm.mean),
            ground_z: self.ground_z,
            per_frame: PerFrameJson {
                frames: &self.frames,
                t_neck_mm: &self.t_neck_mm.per_frame,
                o_neck: &self.o_neck.per_frame,
                mpjpe_mm: m.map(|m| m.mpjpe_mm.per_frame.as_slice()),
                mpjpe_rigid_mm: m.map(|m| m.mpjpe_rigid_mm.per_frame.as_slice()),
                mpjpe_pa_mm: m.map(|m| m.mpjpe_pa_mm.per_frame.as_slice()),
                fs_mm: m.map(|m| m.fs_mm.per_frame.as_slice()),
                fc_mm: m.map(|m| m.fc_mm.per_frame.as_slice()),
            },
        };
        serde_json::to_value(json).expect("report serializes")
    }
}

/// Trajectory metrics, plus motion metrics when both motions are given.
pub fn evaluate_all(
    pred_traj: &Trajectory,
    gt_traj: &Trajectory,
    motions: Option<(&MotionSequence, &MotionSequence)>,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let t_neck_mm = translation_error(pred_traj, gt_traj)?;
    let o_neck = orientation_error(pred_traj, gt_traj)?;
    let mut ground_z = config.ground_z;
    let motion = match motions {
        None => None,
        Some((pred, gt)) => {
            if config.estimate_ground {
                ground_z = estimate_ground(gt).unwrap_or(config.ground_z);
            }
            Some(MotionMetrics {
                mpjpe_mm: mpjpe(pred, gt)?,
                mpjpe_rigid_mm: mpjpe_rigid(pred, gt)?,
                mpjpe_pa_mm: mpjpe_pa(pred, gt)?,
                fs_mm: foot_sliding(pred, ground_z, config.fs_height_threshold),
                fc_mm: foot_contact(pred, ground_z),
            })
        }
    };
    Ok(MetricsReport { frames: gt_traj.indices().collect(), t_neck_mm, o_neck, ground_z, motion })
}
