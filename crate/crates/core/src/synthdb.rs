//! Virtual camera sampling for a synthetic localization database.
//!
//! Camera positions lie on an axis-aligned grid over the point cloud's xy
//! bounding box and on fixed height levels. Any position closer than
//! `clearance` to the nearest cloud point is discarded. Each kept position
//! gets `yaws_per_position` evenly spaced headings, each with a pitch drawn
//! uniformly from `pitch_range` and zero roll.
//!
//! Pitch draws come from a ChaCha8 stream seeded with `rng_seed` and
//! selected by the grid cell's linear id, so the output does not depend on
//! how cells are scheduled across threads.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{so3_exp, RigidPose, Rotation};
use crate::trajio::{self, Frame, PointCloud, TrajIoError, Trajectory};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum SynthDbError {
    #[error("cannot index an empty point cloud")]
    EmptyCloud,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] TrajIoError),
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// k-d tree over a point cloud with median splits.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let slice = &self.order[start..end];
        let (lo, hi) = slice.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), &i| (lo.inf(&self.points[i]), hi.sup(&self.points[i])),
        );
        let axis = (hi - lo).imax();
        let mid = (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[start + mid]][axis];
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index of the closest point and its distance. Ties go to the lowest index.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(0, query, &mut best);
        (best.1, best.0.sqrt())
    }

    fn nearest_in(&self, node: usize, q: &Vector3<f64>, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && i < best.1) {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.0 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// Indices of all points within `radius` of `query`, ascending.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_in(0, query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_in(&self, node: usize, q: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().filter(|&&i| (self.points[i] - q).norm_squared() <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff < 0.0 || diff * diff <= r2 {
                    self.radius_in(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_in(right, q, r2, out);
                }
            }
        }
    }
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex, SynthDbError> {
    if cloud.is_empty() {
        return Err(SynthDbError::EmptyCloud);
    }
    let mut index =
        SpatialIndex { points: cloud.points.clone(), order: (0..cloud.len()).collect(), nodes: Vec::new() };
    index.build_node(0, cloud.len());
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSamplerConfig {
    pub spacing_xy: f64,
    pub spacing_z: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub clearance: f64,
    /// `[min, max]` pitch in radians; positive looks up.
    pub pitch_range: [f64; 2],
    pub yaws_per_position: u32,
    pub rng_seed: u64,
}

impl Default for GridSamplerConfig {
    fn default() -> Self {
        let pitch = 30f64.to_radians();
        Self {
            spacing_xy: 0.15,
            spacing_z: 0.25,
            z_min: 0.5,
            z_max: 1.75,
            clearance: 0.2,
            pitch_range: [-pitch, pitch],
            yaws_per_position: 8,
            rng_seed: 0,
        }
    }
}

impl GridSamplerConfig {
    pub fn validate(&self) -> Result<(), SynthDbError> {
        let bad = |m: String| Err(SynthDbError::InvalidConfig(m));
        for (name, v) in [("spacing_xy", self.spacing_xy), ("spacing_z", self.spacing_z), ("clearance", self.clearance)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min <= self.z_max) {
            return bad(format!("need z_min <= z_max, got {} and {}", self.z_min, self.z_max));
        }
        let [lo, hi] = self.pitch_range;
        let half = std::f64::consts::FRAC_PI_2;
        if !(lo > -half && hi < half && lo <= hi) {
            return bad(format!("pitch range [{lo}, {hi}] must be ordered and inside (-pi/2, pi/2)"));
        }
        if self.yaws_per_position == 0 {
            return bad("yaws_per_position must be at least 1".into());
        }
        Ok(())
    }

    /// Height levels `z_min, z_min + spacing_z, …` up to `z_max`.
    pub fn z_levels(&self) -> Vec<f64> {
        (0..grid_count(self.z_max - self.z_min, self.spacing_z)).map(|k| self.z_min + k as f64 * self.spacing_z).collect()
    }
}

/// Number of nodes covering `[0, extent]` at `spacing`, including both ends;
/// the last node may overshoot the extent by less than one spacing.
pub fn grid_count(extent: f64, spacing: f64) -> usize {
    let steps = extent / spacing;
    let rounded = steps.round();
    // Extents that are whole multiples of the spacing (up to rounding) end on a node.
    let whole = if (steps - rounded).abs() < 1e-9 { rounded } else { steps.ceil() };
    whole.max(0.0) as usize + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatabaseEntry {
    pub pose: RigidPose,
    /// `(ix, iy, iz)` grid node.
    pub grid_cell: [usize; 3],
    pub sample_id: u64,
}

/// Camera orientation for a heading and pitch, zero roll, forward = body +x.
pub fn camera_rotation(yaw: f64, pitch: f64) -> Rotation {
    let tilt = so3_exp(&Vector3::new(0.0, -pitch, 0.0)).expect("finite pitch");
    Rotation::from_yaw(yaw).compose(&tilt)
}

pub fn sample_camera_grid(
    cloud: &PointCloud,
    index: &SpatialIndex,
    config: &GridSamplerConfig,
) -> Result<Vec<DatabaseEntry>, SynthDbError> {
    config.validate()?;
    let Some((lo, hi)) = cloud.bounds() else {
        return Ok(Vec::new());
    };
    let nx = grid_count(hi.x - lo.x, config.spacing_xy);
    let ny = grid_count(hi.y - lo.y, config.spacing_xy);
    let levels = config.z_levels();
    let cells = nx * ny * levels.len();
    let yaws = config.yaws_per_position as usize;
    let [pitch_lo, pitch_hi] = config.pitch_range;

    let per_cell: Vec<Vec<(RigidPose, [usize; 3])>> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let ix = cell % nx;
            let iy = (cell / nx) % ny;
            let iz = cell / (nx * ny);
            let position = Vector3::new(
                lo.x + ix as f64 * config.spacing_xy,
                lo.y + iy as f64 * config.spacing_xy,
                levels[iz],
            );
            let (_, distance) = index.nearest(&position);
            if distance < config.clearance {
                return Vec::new();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(cell as u64);
            (0..yaws)
                .map(|j| {
                    let yaw = 2.0 * std::f64::consts::PI * j as f64 / yaws as f64;
                    let pitch = if pitch_hi > pitch_lo { rng.random_range(pitch_lo..pitch_hi) } else { pitch_lo };
                    (RigidPose::new(camera_rotation(yaw, pitch), position), [ix, iy, iz])
                })
                .collect()
        })
        .collect();

    Ok(per_cell
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (pose, grid_cell))| DatabaseEntry { pose, grid_cell, sample_id: i as u64 })
        .collect())
}

/// Writes entries as a trajectory CSV whose frame column is the sample id.
pub fn export_database_poses(entries: &[DatabaseEntry], path: impl AsRef<Path>) -> Result<(), SynthDbError> {
    let frames = entries.iter().map(|e| Frame { index: e.sample_id, pose: e.pose }).collect();
    let traj = Trajectory::new(1.0, frames)?;
    trajio::write_trajectory(&traj, path)?;
    Ok(())
}
