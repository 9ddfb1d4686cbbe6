//! In-memory data model and on-disk formats.
//!
//! Trajectories, anchor candidates and motion sequences are stored as
//! line-oriented UTF-8 CSV. Metadata lines start with `#` and hold
//! `key: value` pairs; the first non-comment line names the columns.
//!
//! ```text
//! # format_version: 1
//! # kind: trajectory
//! # fps: 10
//! # convention: camera_to_world
//! frame,tx,ty,tz,qw,qx,qy,qz
//! 0,0.0,0.0,0.0,1.0,0.0,0.0,0.0
//! ```
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits. Units are meters and seconds.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::geom::{RigidPose, Rotation};

pub const FORMAT_VERSION: u32 = 1;
pub const NUM_JOINTS: usize = 22;

const TRAJECTORY_COLUMNS: &str = "frame,tx,ty,tz,qw,qx,qy,qz";
const ANCHOR_COLUMNS: &str = "frame,tx,ty,tz,qw,qx,qy,qz,inlier_count,inlier_ratio";

#[derive(Debug, Error)]
pub enum TrajIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated{}: {message}", fmt_line(*.line))]
    Invariant { line: Option<usize>, message: String },
    #[error("PLY error at {location}: {message}")]
    Ply { location: String, message: String },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, TrajIoError>;

fn parse_err(line: usize, message: impl Into<String>) -> TrajIoError {
    TrajIoError::Parse { line, message: message.into() }
}

fn invariant(line: Option<usize>, message: impl Into<String>) -> TrajIoError {
    TrajIoError::Invariant { line, message: message.into() }
}

/// How poses in a file map between camera and world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseConvention {
    #[default]
    CameraToWorld,
    WorldToCamera,
}

impl PoseConvention {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "camera_to_world" => Some(Self::CameraToWorld),
            "world_to_camera" => Some(Self::WorldToCamera),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub pose: RigidPose,
}

/// Frame-indexed camera-to-world poses sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    fps: f64,
    frames: Vec<Frame>,
}

fn check_fps(fps: f64) -> Result<()> {
    if fps > 0.0 && fps.is_finite() {
        Ok(())
    } else {
        Err(invariant(None, format!("fps must be positive, got {fps}")))
    }
}

fn check_pose(pose: &RigidPose, line: Option<usize>) -> Result<()> {
    let finite = pose.translation.iter().chain(pose.rotation.wxyz().iter()).all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(invariant(line, "pose has non-finite components"))
    }
}

impl Trajectory {
    pub fn new(fps: f64, frames: Vec<Frame>) -> Result<Self> {
        check_fps(fps)?;
        for (i, f) in frames.iter().enumerate() {
            check_pose(&f.pose, None)?;
            if i > 0 && f.index <= frames[i - 1].index {
                return Err(invariant(
                    None,
                    format!("frame {} does not follow frame {}", f.index, frames[i - 1].index),
                ));
            }
        }
        Ok(Self { fps, frames })
    }

    /// Frames numbered `0..poses.len()`.
    pub fn from_poses(fps: f64, poses: impl IntoIterator<Item = RigidPose>) -> Result<Self> {
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| Frame { index: i as u64, pose })
            .collect();
        Self::new(fps, frames)
    }

    pub fn empty(fps: f64) -> Result<Self> {
        Self::new(fps, Vec::new())
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &RigidPose> {
        self.frames.iter().map(|f| &f.pose)
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().map(|f| f.index)
    }

    pub fn position_of(&self, frame_index: u64) -> Option<usize> {
        self.frames.binary_search_by_key(&frame_index, |f| f.index).ok()
    }

    pub fn pose_at(&self, frame_index: u64) -> Option<&RigidPose> {
        self.position_of(frame_index).map(|i| &self.frames[i].pose)
    }

    /// Applies `f` to every pose, keeping indices and rate.
    pub fn map_poses(&self, mut f: impl FnMut(&RigidPose) -> RigidPose) -> Trajectory {
        Trajectory {
            fps: self.fps,
            frames: self.frames.iter().map(|fr| Frame { index: fr.index, pose: f(&fr.pose) }).collect(),
        }
    }
}

/// Raw localization result for one frame with its PnP inlier statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorCandidate {
    pub frame_index: u64,
    pub pose: RigidPose,
    pub inlier_count: u64,
    pub inlier_ratio: f64,
}

impl AnchorCandidate {
    pub fn validate(&self) -> Result<()> {
        check_pose(&self.pose, None)?;
        if !(0.0..=1.0).contains(&self.inlier_ratio) {
            return Err(invariant(
                None,
                format!("frame {}: inlier_ratio {} outside [0, 1]", self.frame_index, self.inlier_ratio),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invariant(None, "point cloud has non-finite coordinates"));
        }
        Ok(Self { points, colors: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounds `(min, max)`, or `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

/// Named joint indices inside a 22-joint skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JointLayout {
    pub neck: usize,
    pub left_foot: usize,
    pub right_foot: usize,
    pub left_toe: usize,
    pub right_toe: usize,
    pub root: usize,
}

impl Default for JointLayout {
    /// SMPL-X body order: pelvis 0, ankles 7/8, feet 10/11, neck 12.
    fn default() -> Self {
        Self { neck: 12, left_foot: 7, right_foot: 8, left_toe: 10, right_toe: 11, root: 0 }
    }
}

impl JointLayout {
    fn named(&self) -> [(&'static str, usize); 6] {
        [
            ("neck", self.neck),
            ("left_foot", self.left_foot),
            ("right_foot", self.right_foot),
            ("left_toe", self.left_toe),
            ("right_toe", self.right_toe),
            ("root", self.root),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let named = self.named();
        for (i, (name, idx)) in named.iter().enumerate() {
            if *idx >= NUM_JOINTS {
                return Err(invariant(None, format!("joint {name} index {idx} out of range")));
            }
            if let Some((other, _)) = named[..i].iter().find(|(_, j)| j == idx) {
                return Err(invariant(None, format!("joints {other} and {name} share index {idx}")));
            }
        }
        Ok(())
    }

    /// Foot and toe joints used by the contact metrics.
    pub fn foot_joints(&self) -> [usize; 4] {
        [self.left_foot, self.right_foot, self.left_toe, self.right_toe]
    }

    fn to_header(self) -> String {
        self.named().iter().map(|(n, i)| format!("{n}={i}")).collect::<Vec<_>>().join(" ")
    }

    fn from_header(s: &str) -> std::result::Result<Self, String> {
        let mut map = HashMap::new();
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("bad layout entry '{tok}'"))?;
            let v: usize = v.parse().map_err(|_| format!("bad joint index '{v}'"))?;
            if map.insert(k.to_string(), v).is_some() {
                return Err(format!("joint '{k}' listed twice"));
            }
        }
        let mut get = |k: &str| map.remove(k).ok_or_else(|| format!("layout lacks '{k}'"));
        let layout = JointLayout {
            neck: get("neck")?,
            left_foot: get("left_foot")?,
            right_foot: get("right_foot")?,
            left_toe: get("left_toe")?,
            right_toe: get("right_toe")?,
            root: get("root")?,
        };
        if let Some(k) = map.keys().next() {
            return Err(format!("unknown layout joint '{k}'"));
        }
        Ok(layout)
    }
}

pub type JointFrame = [Vector3<f64>; NUM_JOINTS];

/// Per-frame 22-joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    layout: JointLayout,
    indices: Vec<u64>,
    frames: Vec<JointFrame>,
}

impl MotionSequence {
    pub fn new(fps: f64, layout: JointLayout, frames: Vec<JointFrame>) -> Result<Self> {
        let indices = (0..frames.len() as u64).collect();
        Self::with_indices(fps, layout, indices, frames)
    }

    pub fn with_indices(
        fps: f64,
        layout: JointLayout,
        indices: Vec<u64>,
        frames: Vec<JointFrame>,
    ) -> Result<Self> {
        check_fps(fps)?;
        layout.validate()?;
        if indices.len() != frames.len() {
            return Err(invariant(None, "frame index count does not match frame count"));
        }
        if let Some(w) = indices.windows(2).find(|w| w[1] <= w[0]) {
            return Err(invariant(None, format!("frame {} does not follow frame {}", w[1], w[0])));
        }
        if frames.iter().flatten().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invariant(None, "motion has non-finite joint coordinates"));
        }
        Ok(Self { fps, layout, indices, frames })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn frames(&self) -> &[JointFrame] {
        &self.frames
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

// ---------------------------------------------------------------------------
// CSV plumbing

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

struct CsvDoc {
    /// key → (line number, value)
    meta: HashMap<String, (usize, String)>,
    columns: Vec<String>,
    /// `(line number, fields)`
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv_doc<R: BufRead>(reader: R) -> Result<CsvDoc> {
    let mut meta = HashMap::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| {
            if e.kind() == io::ErrorKind::InvalidData {
                parse_err(lineno, "line is not valid UTF-8")
            } else {
                TrajIoError::Io(e)
            }
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if columns.is_some() {
                return Err(parse_err(lineno, "metadata line after column header"));
            }
            let (k, v) = rest
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, "metadata line must be '# key: value'"))?;
            meta.insert(k.trim().to_string(), (lineno, v.trim().to_string()));
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if columns.is_none() {
            columns = Some(fields);
        } else {
            rows.push((lineno, fields));
        }
    }
    let columns = columns.ok_or_else(|| parse_err(1, "missing column header"))?;
    if let Some((line, v)) = meta.get("format_version") {
        if v.parse::<u32>().ok() != Some(FORMAT_VERSION) {
            return Err(parse_err(*line, format!("unsupported format_version '{v}'")));
        }
    } else {
        return Err(parse_err(1, "missing format_version"));
    }
    Ok(CsvDoc { meta, columns, rows })
}

impl CsvDoc {
    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.meta.get("kind") {
            Some((_, k)) if k == kind => Ok(()),
            Some((line, k)) => Err(parse_err(*line, format!("expected kind '{kind}', found '{k}'"))),
            None => Err(parse_err(1, "missing kind")),
        }
    }

    fn expect_columns(&self, expected: &str) -> Result<()> {
        let found = self.columns.join(",");
        if found == expected {
            Ok(())
        } else {
            Err(parse_err(1, format!("expected columns '{expected}', found '{found}'")))
        }
    }

    fn fps(&self) -> Result<f64> {
        let (line, v) = self.meta.get("fps").ok_or_else(|| parse_err(1, "missing fps"))?;
        let fps: f64 = v.parse().map_err(|_| parse_err(*line, format!("bad fps '{v}'")))?;
        if fps > 0.0 && fps.is_finite() {
            Ok(fps)
        } else {
            Err(invariant(Some(*line), format!("fps must be positive, got {fps}")))
        }
    }

    fn convention(&self) -> Result<PoseConvention> {
        match self.meta.get("convention") {
            None => Ok(PoseConvention::CameraToWorld),
            Some((line, c)) => {
                PoseConvention::parse(c).ok_or_else(|| parse_err(*line, format!("unknown convention '{c}'")))
            }
        }
    }
}

fn field_f64(fields: &[String], i: usize, line: usize, name: &str) -> Result<f64> {
    let s = fields.get(i).ok_or_else(|| parse_err(line, format!("missing column {name}")))?;
    let v: f64 = s.parse().map_err(|_| parse_err(line, format!("bad number '{s}' in column {name}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, format!("non-finite value in column {name}")))
    }
}

fn field_u64(fields: &[String], i: usize, line: usize, name: &str) -> Result<u64> {
    let s = fields.get(i).ok_or_else(|| parse_err(line, format!("missing column {name}")))?;
    s.parse().map_err(|_| parse_err(line, format!("bad integer '{s}' in column {name}")))
}

fn check_width(fields: &[String], expected: usize, line: usize) -> Result<()> {
    if fields.len() == expected {
        Ok(())
    } else {
        Err(parse_err(line, format!("expected {expected} columns, found {}", fields.len())))
    }
}

fn parse_pose(fields: &[String], line: usize) -> Result<RigidPose> {
    let mut v = [0.0; 7];
    for (k, name) in ["tx", "ty", "tz", "qw", "qx", "qy", "qz"].iter().enumerate() {
        v[k] = field_f64(fields, k + 1, line, name)?;
    }
    let rotation = Rotation::from_wxyz(v[3], v[4], v[5], v[6])
        .map_err(|e| parse_err(line, e.to_string()))?;
    Ok(RigidPose::new(rotation, Vector3::new(v[0], v[1], v[2])))
}

fn pose_fields(pose: &RigidPose) -> String {
    let t = pose.translation;
    let [w, x, y, z] = pose.rotation.wxyz();
    [t.x, t.y, t.z, w, x, y, z].iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn check_increasing(prev: Option<u64>, index: u64, line: usize) -> Result<()> {
    match prev {
        Some(p) if index <= p => Err(invariant(
            Some(line),
            format!("frame {index} is not greater than previous frame {p}"),
        )),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Trajectory CSV

pub fn parse_trajectory<R: BufRead>(reader: R) -> Result<Trajectory> {
    let doc = read_csv_doc(reader)?;
    doc.expect_kind("trajectory")?;
    doc.expect_columns(TRAJECTORY_COLUMNS)?;
    let fps = doc.fps()?;
    let convention = doc.convention()?;
    let mut frames = Vec::with_capacity(doc.rows.len());
    let mut prev = None;
    for (line, fields) in &doc.rows {
        check_width(fields, 8, *line)?;
        let index = field_u64(fields, 0, *line, "frame")?;
        check_increasing(prev, index, *line)?;
        prev = Some(index);
        let mut pose = parse_pose(fields, *line)?;
        if convention == PoseConvention::WorldToCamera {
            pose = pose.inverse();
        }
        frames.push(Frame { index, pose });
    }
    Ok(Trajectory { fps, frames })
}

pub fn format_trajectory<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "# format_version: {FORMAT_VERSION}")?;
    writeln!(out, "# kind: trajectory")?;
    writeln!(out, "# fps: {}", fmt_f64(traj.fps))?;
    writeln!(out, "# convention: camera_to_world")?;
    writeln!(out, "{TRAJECTORY_COLUMNS}")?;
    for f in &traj.frames {
        writeln!(out, "{},{}", f.index, pose_fields(&f.pose))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    parse_trajectory(open(path.as_ref())?)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    format_trajectory(traj, create(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Anchor candidate CSV

pub fn parse_anchor_candidates<R: BufRead>(reader: R) -> Result<Vec<AnchorCandidate>> {
    let doc = read_csv_doc(reader)?;
    doc.expect_kind("anchor_candidates")?;
    doc.expect_columns(ANCHOR_COLUMNS)?;
    let convention = doc.convention()?;
    let mut out = Vec::with_capacity(doc.rows.len());
    let mut prev = None;
    for (line, fields) in &doc.rows {
        check_width(fields, 10, *line)?;
        let frame_index = field_u64(fields, 0, *line, "frame")?;
        check_increasing(prev, frame_index, *line)?;
        prev = Some(frame_index);
        let mut pose = parse_pose(fields, *line)?;
        if convention == PoseConvention::WorldToCamera {
            pose = pose.inverse();
        }
        let inlier_count = field_u64(fields, 8, *line, "inlier_count")?;
        let inlier_ratio = field_f64(fields, 9, *line, "inlier_ratio")?;
        if !(0.0..=1.0).contains(&inlier_ratio) {
            return Err(invariant(Some(*line), format!("inlier_ratio {inlier_ratio} outside [0, 1]")));
        }
        out.push(AnchorCandidate { frame_index, pose, inlier_count, inlier_ratio });
    }
    Ok(out)
}

pub fn format_anchor_candidates<W: Write>(candidates: &[AnchorCandidate], mut out: W) -> Result<()> {
    writeln!(out, "# format_version: {FORMAT_VERSION}")?;
    writeln!(out, "# kind: anchor_candidates")?;
    writeln!(out, "# convention: camera_to_world")?;
    writeln!(out, "{ANCHOR_COLUMNS}")?;
    for c in candidates {
        writeln!(
            out,
            "{},{},{},{}",
            c.frame_index,
            pose_fields(&c.pose),
            c.inlier_count,
            fmt_f64(c.inlier_ratio)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_anchor_candidates(path: impl AsRef<Path>) -> Result<Vec<AnchorCandidate>> {
    parse_anchor_candidates(open(path.as_ref())?)
}

pub fn write_anchor_candidates(candidates: &[AnchorCandidate], path: impl AsRef<Path>) -> Result<()> {
    format_anchor_candidates(candidates, create(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Motion CSV

fn motion_columns() -> String {
    let mut cols = vec!["frame".to_string()];
    for j in 0..NUM_JOINTS {
        for axis in ["x", "y", "z"] {
            cols.push(format!("j{j}{axis}"));
        }
    }
    cols.join(",")
}

pub fn parse_motion<R: BufRead>(reader: R) -> Result<MotionSequence> {
    let doc = read_csv_doc(reader)?;
    doc.expect_kind("motion")?;
    let fps = doc.fps()?;
    let layout = match doc.meta.get("layout") {
        Some((line, s)) => {
            let layout = JointLayout::from_header(s).map_err(|m| parse_err(*line, m))?;
            layout.validate().map_err(|e| match e {
                TrajIoError::Invariant { message, .. } => invariant(Some(*line), message),
                other => other,
            })?;
            layout
        }
        None => return Err(parse_err(1, "missing layout")),
    };
    doc.expect_columns(&motion_columns())?;
    let width = 1 + 3 * NUM_JOINTS;
    let mut indices = Vec::with_capacity(doc.rows.len());
    let mut frames = Vec::with_capacity(doc.rows.len());
    for (line, fields) in &doc.rows {
        if fields.len() != width {
            let joints = (fields.len().saturating_sub(1)) as f64 / 3.0;
            return Err(invariant(
                Some(*line),
                format!("frame has {joints} joints, expected {NUM_JOINTS}"),
            ));
        }
        let index = field_u64(fields, 0, *line, "frame")?;
        check_increasing(indices.last().copied(), index, *line)?;
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            for a in 0..3 {
                joint[a] = field_f64(fields, 1 + 3 * j + a, *line, "joint")?;
            }
        }
        indices.push(index);
        frames.push(joints);
    }
    Ok(MotionSequence { fps, layout, indices, frames })
}

pub fn format_motion<W: Write>(motion: &MotionSequence, mut out: W) -> Result<()> {
    writeln!(out, "# format_version: {FORMAT_VERSION}")?;
    writeln!(out, "# kind: motion")?;
    writeln!(out, "# fps: {}", fmt_f64(motion.fps))?;
    writeln!(out, "# layout: {}", motion.layout.to_header())?;
    writeln!(out, "{}", motion_columns())?;
    for (index, joints) in motion.indices.iter().zip(&motion.frames) {
        let vals: Vec<String> = joints.iter().flat_map(|p| p.iter().map(|v| fmt_f64(*v))).collect();
        writeln!(out, "{index},{}", vals.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    parse_motion(open(path.as_ref())?)
}

pub fn write_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    format_motion(motion, create(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// JSON

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn ply_err(location: impl Into<String>, message: impl Into<String>) -> TrajIoError {
    TrajIoError::Ply { location: location.into(), message: message.into() }
}

/// Indices of x, y, z and optional r, g, b inside the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |name: &str| el.props.iter().position(|p| p.name == name);
    let mut xyz = [0; 3];
    for (k, name) in ["x", "y", "z"].iter().enumerate() {
        let i = find(name).ok_or_else(|| ply_err("header", format!("vertex element lacks property {name}")))?;
        match el.props[i].kind {
            PropKind::Scalar(Scalar::F32 | Scalar::F64) => xyz[k] = i,
            _ => {
                return Err(ply_err(
                    "header",
                    format!("unsupported type for vertex property {name}; expected float or double"),
                ))
            }
        }
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b))
            if [r, g, b].iter().all(|&i| matches!(el.props[i].kind, PropKind::Scalar(Scalar::U8))) =>
        {
            Some([r, g, b])
        }
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn parse_ply_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<Element>, usize)> {
    let mut pos = 0;
    let mut lineno = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ply_err("header", "missing end_header"))?;
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        lineno += 1;
        let loc = format!("header line {lineno}");
        let line = std::str::from_utf8(raw).map_err(|_| ply_err(&loc, "header is not valid UTF-8"))?;
        let toks: Vec<&str> = line.trim_end_matches('\r').split_whitespace().collect();
        if lineno == 1 {
            if toks != ["ply"] {
                return Err(ply_err(&loc, "missing 'ply' magic"));
            }
            continue;
        }
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if toks.len() != 3 || toks[2] != "1.0" {
                    return Err(ply_err(&loc, "malformed format line"));
                }
                format = Some(match toks[1] {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(ply_err(&loc, format!("unsupported format '{other}'"))),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(ply_err(&loc, "malformed element line"));
                }
                let count = toks[2].parse().map_err(|_| ply_err(&loc, "bad element count"))?;
                elements.push(Element { name: toks[1].to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| ply_err(&loc, "property before element"))?;
                let prop = match toks.as_slice() {
                    ["property", "list", c, i, name] => {
                        let count = Scalar::parse(c).ok_or_else(|| ply_err(&loc, format!("unknown type '{c}'")))?;
                        if matches!(count, Scalar::F32 | Scalar::F64) {
                            return Err(ply_err(&loc, "list count must be an integer type"));
                        }
                        let item = Scalar::parse(i).ok_or_else(|| ply_err(&loc, format!("unknown type '{i}'")))?;
                        Property { name: name.to_string(), kind: PropKind::List { count, item } }
                    }
                    ["property", t, name] => {
                        let s = Scalar::parse(t).ok_or_else(|| ply_err(&loc, format!("unknown type '{t}'")))?;
                        Property { name: name.to_string(), kind: PropKind::Scalar(s) }
                    }
                    _ => return Err(ply_err(&loc, "malformed property line")),
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(ply_err(&loc, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| ply_err("header", "missing format line"))?;
    Ok((format, elements, pos))
}

pub fn parse_pointcloud_ply(bytes: &[u8]) -> Result<PointCloud> {
    let (format, elements, body_start) = parse_ply_header(bytes)?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err("header", "no vertex element"))?;
    let layout = vertex_layout(&elements[vertex_pos])?;
    let body = &bytes[body_start..];
    let (points, colors) = match format {
        PlyFormat::Ascii => read_ascii_body(body, &elements, vertex_pos, &layout)?,
        PlyFormat::BinaryLittleEndian => read_binary_body(body, &elements, vertex_pos, &layout)?,
    };
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(ply_err("body", "non-finite vertex coordinate"));
    }
    Ok(PointCloud { points, colors })
}

type Body = (Vec<Vector3<f64>>, Option<Vec<[u8; 3]>>);

fn read_ascii_body(body: &[u8], elements: &[Element], vertex_pos: usize, layout: &VertexLayout) -> Result<Body> {
    let text = std::str::from_utf8(body).map_err(|_| ply_err("body", "ASCII body is not valid UTF-8"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut points = Vec::new();
    let mut colors = layout.rgb.map(|_| Vec::new());
    for (ei, el) in elements.iter().enumerate() {
        if ei > vertex_pos {
            break;
        }
        for n in 0..el.count {
            let loc = || format!("{} {n}", el.name);
            let line = lines.next().ok_or_else(|| {
                ply_err(loc(), format!("truncated body: expected {} {} records, found {n}", el.count, el.name))
            })?;
            if ei != vertex_pos {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            // Resolve property positions; list properties make the token layout record-dependent.
            let mut values = Vec::with_capacity(el.props.len());
            let mut t = 0;
            for p in &el.props {
                match p.kind {
                    PropKind::Scalar(_) => {
                        let tok = toks.get(t).ok_or_else(|| ply_err(loc(), "too few values"))?;
                        values.push(Some(*tok));
                        t += 1;
                    }
                    PropKind::List { .. } => {
                        let tok = toks.get(t).ok_or_else(|| ply_err(loc(), "too few values"))?;
                        let k: usize = tok.parse().map_err(|_| ply_err(loc(), "bad list count"))?;
                        values.push(None);
                        t = t
                            .checked_add(1 + k)
                            .filter(|&t| t <= toks.len())
                            .ok_or_else(|| ply_err(loc(), "too few values"))?;
                    }
                }
            }
            if t != toks.len() {
                return Err(ply_err(loc(), "too many values"));
            }
            let num = |i: usize| -> Result<f64> {
                let tok = values[i].ok_or_else(|| ply_err(loc(), "expected scalar"))?;
                tok.parse::<f64>().map_err(|_| ply_err(loc(), format!("bad number '{tok}'")))
            };
            points.push(Vector3::new(num(layout.xyz[0])?, num(layout.xyz[1])?, num(layout.xyz[2])?));
            if let (Some(rgb), Some(cols)) = (layout.rgb, colors.as_mut()) {
                let mut c = [0u8; 3];
                for k in 0..3 {
                    let tok = values[rgb[k]].unwrap_or("");
                    c[k] = tok.parse().map_err(|_| ply_err(loc(), format!("bad color '{tok}'")))?;
                }
                cols.push(c);
            }
        }
    }
    Ok((points, colors))
}

fn read_binary_body(body: &[u8], elements: &[Element], vertex_pos: usize, layout: &VertexLayout) -> Result<Body> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, loc: &dyn Fn() -> String| -> Result<std::ops::Range<usize>> {
        let end = pos.checked_add(n).filter(|&e| e <= body.len()).ok_or_else(|| {
            ply_err(loc(), "truncated body")
        })?;
        let r = *pos..end;
        *pos = end;
        Ok(r)
    };
    let mut points = Vec::new();
    let mut colors = layout.rgb.map(|_| Vec::new());
    for (ei, el) in elements.iter().enumerate() {
        if ei > vertex_pos {
            break;
        }
        let is_vertex = ei == vertex_pos;
        if is_vertex {
            let min_record: usize = el
                .props
                .iter()
                .map(|p| match p.kind {
                    PropKind::Scalar(s) => s.size(),
                    PropKind::List { count, .. } => count.size(),
                })
                .sum();
            let fits = body.len().saturating_sub(pos) / min_record.max(1);
            points.reserve(el.count.min(fits));
        }
        let mut values = vec![0.0; el.props.len()];
        for n in 0..el.count {
            let loc = || format!("{} {n}", el.name);
            for (pi, p) in el.props.iter().enumerate() {
                match p.kind {
                    PropKind::Scalar(s) => {
                        let r = take(&mut pos, s.size(), &loc)?;
                        values[pi] = s.decode(&body[r]);
                    }
                    PropKind::List { count, item } => {
                        let r = take(&mut pos, count.size(), &loc)?;
                        let k = count.decode(&body[r]);
                        if k < 0.0 {
                            return Err(ply_err(loc(), "negative list count"));
                        }
                        let bytes = (k as usize)
                            .checked_mul(item.size())
                            .ok_or_else(|| ply_err(loc(), "list too long"))?;
                        take(&mut pos, bytes, &loc)?;
                    }
                }
            }
            if is_vertex {
                points.push(Vector3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]));
                if let (Some(rgb), Some(cols)) = (layout.rgb, colors.as_mut()) {
                    cols.push([values[rgb[0]] as u8, values[rgb[1]] as u8, values[rgb[2]] as u8]);
                }
            }
        }
    }
    Ok((points, colors))
}

pub fn read_pointcloud_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    parse_pointcloud_ply(&bytes)
}

/// Writes x, y, z as doubles plus uchar colors when present.
pub fn format_pointcloud_ply<W: Write>(cloud: &PointCloud, format: PlyFormat, mut out: W) -> Result<()> {
    let colors = cloud.colors.as_ref().filter(|c| c.len() == cloud.points.len());
    writeln!(out, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(out, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(out, "format binary_little_endian 1.0")?,
    }
    writeln!(out, "element vertex {}", cloud.points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}")?;
    }
    if colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(out, "property uchar {c}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z))?;
                if let Some(c) = colors {
                    write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = colors {
                    out.write_all(&c[i])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_pointcloud_ply(cloud: &PointCloud, format: PlyFormat, path: impl AsRef<Path>) -> Result<()> {
    format_pointcloud_ply(cloud, format, create(path.as_ref())?)
}
