//! Drift-free, metric-scale camera trajectories from noisy map-based
//! localization anchors and a monocular SLAM track.
//!
//! The pipeline is split into small modules:
//!
//! - [`geom`]: SO(3)/SE(3)/Sim(3) values and exp/log maps.
//! - [`trajio`]: trajectory, anchor, motion, point-cloud and report formats.
//! - [`anchors`]: inlier-threshold and spacing filter for localization results.
//! - [`refine`]: per-interval Sim(3) alignment with residual distribution, and
//!   yaw-only canonicalization.
//! - [`synthdb`]: virtual camera grid sampling over a scanned point cloud.
//! - [`metrics`]: trajectory and joint-position error metrics.
//! - [`driftsim`]: synthetic ground truth, SLAM drift and anchor noise.
//!
//! Frames are right-handed with +z up; a pose's body +x axis is the camera
//! forward direction. Poses map body coordinates into the parent frame.

// Validation uses `!(x > 0.0)` style checks so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod driftsim;
pub mod geom;
pub mod metrics;
pub mod refine;
pub mod synthdb;
pub mod trajio;

pub use geom::{RigidPose, Rotation, SimTangent, SimTransform};

pub use trajio::{AnchorCandidate, JointLayout, MotionSequence, PointCloud, Trajectory};
