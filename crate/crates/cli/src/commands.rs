use std::fs;
use std::path::{Path, PathBuf};

use anchortraj::anchors::{anchor_coverage_report, filter_anchors, AnchorFilterConfig};
use anchortraj::driftsim::{
    corrupt_to_slam, generate_gt_trajectory_with_speed, scenario_seeds, synthesize_anchor_candidates, TrajectoryStyle,
};
use anchortraj::metrics::{evaluate_all, EvalConfig};
use anchortraj::refine::{canonicalize, refine_trajectory, uncanonicalize, CanonicalizationTransform, CutLocusPolicy, RefineConfig, ScaleMode};
use anchortraj::synthdb::{build_index, export_database_poses, sample_camera_grid, GridSamplerConfig};
use anchortraj::trajio;
use clap::{Args, ValueEnum};
use log::{info, warn};

use crate::config::{self, LoadedConfig, SimulateConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleModeArg {
    Unit,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CutLocusArg {
    Error,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Loop,
    Corridor,
    RandomWalk,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AnchorFlags {
    /// Minimum PnP inlier count [default: 500]
    #[arg(long)]
    pub min_inlier_count: Option<u64>,
    /// Minimum PnP inlier ratio [default: 0.5]
    #[arg(long)]
    pub min_inlier_ratio: Option<f64>,
    /// Minimum spacing between accepted anchors, frames [default: 20]
    #[arg(long)]
    pub min_interval_frames: Option<u64>,
}

impl AnchorFlags {
    fn apply(&self, c: &mut AnchorFilterConfig) {
        if let Some(v) = self.min_inlier_count {
            c.min_inlier_count = v;
        }
        if let Some(v) = self.min_inlier_ratio {
            c.min_inlier_ratio = v;
        }
        if let Some(v) = self.min_interval_frames {
            c.min_interval_frames = v;
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct RefineFlags {
    /// Alignment scale: rigid, or anchor baseline over SLAM baseline [default: unit]
    #[arg(long, value_enum)]
    pub scale_mode: Option<ScaleModeArg>,
    /// What to do when a residual rotation reaches pi [default: split]
    #[arg(long = "cut-locus", value_enum)]
    pub cut_locus: Option<CutLocusArg>,
}

impl RefineFlags {
    fn apply(&self, c: &mut RefineConfig) {
        if let Some(m) = self.scale_mode {
            c.scale_mode = match m {
                ScaleModeArg::Unit => ScaleMode::Unit,
                ScaleModeArg::Ratio => ScaleMode::AnchorDistanceRatio,
            };
        }
        if let Some(p) = self.cut_locus {
            c.log_cut_locus_policy = match p {
                CutLocusArg::Error => CutLocusPolicy::Error,
                CutLocusArg::Split => CutLocusPolicy::SplitInterval,
            };
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct MetricFlags {
    /// Floor height for foot metrics, meters [default: 0.0]
    #[arg(long, allow_negative_numbers = true)]
    pub ground_z: Option<f64>,
    /// Use the 5th percentile of ground-truth foot heights as the floor
    #[arg(long)]
    pub estimate_ground: bool,
    /// Foot sliding height threshold H, meters [default: 0.05]
    #[arg(long)]
    pub fs_height_threshold: Option<f64>,
}

impl MetricFlags {
    fn apply(&self, c: &mut EvalConfig) {
        if let Some(v) = self.ground_z {
            c.ground_z = v;
        }
        if self.estimate_ground {
            c.estimate_ground = true;
        }
        if let Some(v) = self.fs_height_threshold {
            c.fs_height_threshold = v;
        }
    }
}

fn validate_metrics(c: &EvalConfig) -> Result<()> {
    if !(c.fs_height_threshold > 0.0 && c.fs_height_threshold.is_finite()) || !c.ground_z.is_finite() {
        return Err(CliError::usage("metrics: fs_height_threshold must be positive and ground_z finite"));
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct SampleDbArgs {
    /// Point cloud (PLY, ASCII or binary little-endian)
    #[arg(long)]
    pub cloud: PathBuf,
    /// Output pose CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Grid spacing in x and y, meters [default: 0.15]
    #[arg(long)]
    pub spacing_xy: Option<f64>,
    /// Spacing between height levels, meters [default: 0.25]
    #[arg(long)]
    pub spacing_z: Option<f64>,
    /// Lowest camera height, meters [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    pub z_min: Option<f64>,
    /// Highest camera height, meters [default: 1.75]
    #[arg(long, allow_negative_numbers = true)]
    pub z_max: Option<f64>,
    /// Minimum distance from any cloud point, meters [default: 0.2]
    #[arg(long)]
    pub clearance: Option<f64>,
    /// Lower pitch bound, degrees [default: -30]
    #[arg(long, allow_negative_numbers = true)]
    pub pitch_min_deg: Option<f64>,
    /// Upper pitch bound, degrees [default: 30]
    #[arg(long, allow_negative_numbers = true)]
    pub pitch_max_deg: Option<f64>,
    /// Headings per kept position [default: 8]
    #[arg(long)]
    pub yaws: Option<u32>,
    /// Seed for pitch sampling (required here or as sampler.rng_seed in the config)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct FilterArgs {
    /// Anchor candidate CSV
    #[arg(long)]
    pub candidates: PathBuf,
    /// Output CSV of accepted anchors
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub anchors: AnchorFlags,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    /// Anchor CSV (filtered again with the active thresholds)
    #[arg(long)]
    pub anchors: PathBuf,
    /// SLAM trajectory CSV
    #[arg(long)]
    pub slam: PathBuf,
    /// Output trajectory CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub refine: RefineFlags,
    #[command(flatten)]
    pub anchor_flags: AnchorFlags,
}

#[derive(Args, Debug, Clone)]
pub struct CanonicalizeArgs {
    /// Input trajectory CSV
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output trajectory CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the world-from-canonical transform (JSON)
    #[arg(long, required_unless_present = "uncanonicalize_with")]
    pub emit_transform: Option<PathBuf>,
    /// Map a canonical trajectory back to the world with this transform instead
    #[arg(long, conflicts_with = "emit_transform")]
    pub uncanonicalize_with: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Predicted trajectory CSV
    #[arg(long)]
    pub pred_traj: PathBuf,
    /// Ground-truth trajectory CSV
    #[arg(long)]
    pub gt_traj: PathBuf,
    /// Predicted joint motion CSV
    #[arg(long, requires = "gt_motion")]
    pub pred_motion: Option<PathBuf>,
    /// Ground-truth joint motion CSV
    #[arg(long, requires = "pred_motion")]
    pub gt_motion: Option<PathBuf>,
    /// Output JSON report
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Scenario seed (required here or as simulate.seed in the config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of frames [default: 400]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame rate [default: 10]
    #[arg(long)]
    pub fps: Option<f64>,
    /// Scale drift per frame [default: 0.002]
    #[arg(long, allow_negative_numbers = true)]
    pub drift: Option<f64>,
    /// Frames between anchor candidates [default: 40]
    #[arg(long)]
    pub anchor_period: Option<usize>,
    /// Fraction of candidates that are outliers [default: 0.1]
    #[arg(long)]
    pub outlier_frac: Option<f64>,
    /// Ground-truth path shape [default: loop]
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    /// Mean ground-truth speed, m/s [default: 0.04]
    #[arg(long)]
    pub gt_speed: Option<f64>,
    /// Output directory for gt.csv, slam.csv and candidates.csv
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// Anchor candidate CSV
    #[arg(long)]
    pub candidates: PathBuf,
    /// SLAM trajectory CSV
    #[arg(long)]
    pub slam: PathBuf,
    /// Ground-truth trajectory CSV for the evaluation step
    #[arg(long)]
    pub gt_traj: PathBuf,
    /// Predicted joint motion CSV
    #[arg(long, requires = "gt_motion")]
    pub pred_motion: Option<PathBuf>,
    /// Ground-truth joint motion CSV
    #[arg(long, requires = "pred_motion")]
    pub gt_motion: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub anchors: AnchorFlags,
    #[command(flatten)]
    pub refine: RefineFlags,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

/// Runs a file operation, naming the file in any error.
fn at<T, E: Into<CliError>>(path: &Path, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| e.into().in_file(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::domain("io", format!("cannot create {}: {e}", dir.display()), None))
}

pub fn sample_db(args: &SampleDbArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut c: GridSamplerConfig = loaded.config.sampler;
    let seed_given = args.seed.is_some() || loaded.sampler_seed_set;
    if !seed_given {
        return Err(CliError::usage("sample-db needs --seed (or sampler.rng_seed in the config)"));
    }
    macro_rules! set {
        ($field:ident, $v:expr) => {
            if let Some(v) = $v {
                c.$field = v;
            }
        };
    }
    set!(spacing_xy, args.spacing_xy);
    set!(spacing_z, args.spacing_z);
    set!(z_min, args.z_min);
    set!(z_max, args.z_max);
    set!(clearance, args.clearance);
    set!(yaws_per_position, args.yaws);
    set!(rng_seed, args.seed);
    if let Some(v) = args.pitch_min_deg {
        c.pitch_range[0] = v.to_radians();
    }
    if let Some(v) = args.pitch_max_deg {
        c.pitch_range[1] = v.to_radians();
    }
    c.validate()?;

    let cloud = at(&args.cloud, trajio::read_pointcloud_ply(&args.cloud))?;
    let index = build_index(&cloud)?;
    let entries = sample_camera_grid(&cloud, &index, &c)?;
    info!("{} cloud points, {} database poses", cloud.len(), entries.len());
    export_database_poses(&entries, &args.out)?;
    Ok(())
}

pub fn filter(candidates: &Path, out: &Path, c: &AnchorFilterConfig) -> Result<()> {
    let raw = at(candidates, trajio::read_anchor_candidates(candidates))?;
    let set = filter_anchors(&raw, c)?;
    let total = raw.last().map_or(0, |a| a.frame_index + 1);
    let cov = anchor_coverage_report(&set, total);
    info!(
        "kept {} of {} candidates; largest gap {} frames, head {} frames, tail {} frames",
        cov.anchor_count,
        raw.len(),
        cov.largest_gap,
        cov.head_span,
        cov.tail_span
    );
    if set.is_empty() {
        warn!("no candidate passed the anchor thresholds");
    }
    at(out, trajio::write_anchor_candidates(set.anchors(), out))?;
    Ok(())
}

pub fn refine(anchors: &Path, slam: &Path, out: &Path, filter_cfg: &AnchorFilterConfig, c: &RefineConfig) -> Result<()> {
    let raw = at(anchors, trajio::read_anchor_candidates(anchors))?;
    let set = filter_anchors(&raw, filter_cfg)?;
    if set.len() < raw.len() {
        info!("{} of {} anchors fail the active thresholds and are ignored", raw.len() - set.len(), raw.len());
    }
    let slam = at(slam, trajio::read_trajectory(slam))?;
    let refined = refine_trajectory(&set, &slam, c)?;
    at(out, trajio::write_trajectory(&refined, out))?;
    Ok(())
}

pub fn canonicalize_cmd(args: &CanonicalizeArgs) -> Result<()> {
    let traj = at(&args.input, trajio::read_trajectory(&args.input))?;
    if let Some(path) = &args.uncanonicalize_with {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::domain("io", format!("cannot read {}: {e}", path.display()), None))?;
        let value: serde_json::Value = at(path, serde_json::from_str(&text).map_err(trajio::TrajIoError::from))?;
        let xf = at(path, CanonicalizationTransform::from_json(&value))?;
        at(&args.out, trajio::write_trajectory(&uncanonicalize(&traj, &xf), &args.out))?;
        return Ok(());
    }
    let emit = args.emit_transform.as_ref().expect("clap requires one of the two");
    let (canonical, xf) = canonicalize(&traj)?;
    at(&args.out, trajio::write_trajectory(&canonical, &args.out))?;
    at(emit, trajio::write_json(&xf.to_json(), emit))?;
    Ok(())
}

pub fn evaluate(
    pred: &Path,
    gt: &Path,
    motions: Option<(&Path, &Path)>,
    out: &Path,
    c: &EvalConfig,
) -> Result<()> {
    validate_metrics(c)?;
    let pred = at(pred, trajio::read_trajectory(pred))?;
    let gt = at(gt, trajio::read_trajectory(gt))?;
    let motions = match motions {
        Some((p, g)) => Some((trajio::read_motion(p)?, trajio::read_motion(g)?)),
        None => None,
    };
    let report = evaluate_all(&pred, &gt, motions.as_ref().map(|(p, g)| (p, g)), c)?;
    info!("T_neck {:.3} mm, O_neck {:.5}", report.t_neck_mm.mean, report.o_neck.mean);
    at(out, trajio::write_json(&report.to_json(), out))?;
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut c = loaded.config.metrics;
    args.metrics.apply(&mut c);
    let motions = args.pred_motion.as_deref().zip(args.gt_motion.as_deref());
    evaluate(&args.pred_traj, &args.gt_traj, motions, &args.out, &c)
}

pub fn filter_cmd(args: &FilterArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut c = loaded.config.anchors;
    args.anchors.apply(&mut c);
    c.validate()?;
    filter(&args.candidates, &args.out, &c)
}

pub fn refine_cmd(args: &RefineArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut fc = loaded.config.anchors;
    args.anchor_flags.apply(&mut fc);
    fc.validate()?;
    let mut rc = loaded.config.refine;
    args.refine.apply(&mut rc);
    refine(&args.anchors, &args.slam, &args.out, &fc, &rc)
}

pub fn simulate(args: &SimulateArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut config = loaded.config;
    let s: &mut SimulateConfig = &mut config.simulate;
    if let Some(v) = args.seed {
        s.seed = Some(v);
    }
    let Some(seed) = s.seed else {
        return Err(CliError::usage("simulate needs --seed (or simulate.seed in the config)"));
    };
    macro_rules! set {
        ($field:ident, $v:expr) => {
            if let Some(v) = $v {
                s.$field = v;
            }
        };
    }
    set!(frames, args.frames);
    set!(fps, args.fps);
    set!(drift, args.drift);
    set!(anchor_period, args.anchor_period);
    set!(outlier_frac, args.outlier_frac);
    set!(gt_speed, args.gt_speed);
    if let Some(style) = args.style {
        s.style = match style {
            StyleArg::Loop => TrajectoryStyle::Loop,
            StyleArg::Corridor => TrajectoryStyle::Corridor,
            StyleArg::RandomWalk => TrajectoryStyle::RandomWalk,
        };
    }
    let s = config.simulate;
    let [gt_seed, drift_seed, anchor_seed] = scenario_seeds(seed);
    let gt = generate_gt_trajectory_with_speed(gt_seed, s.frames, s.fps, s.style, s.gt_speed)?;
    let slam = corrupt_to_slam(&gt, &s.drift_config(drift_seed))?;
    let candidates = synthesize_anchor_candidates(&gt, &s.anchor_noise_config(anchor_seed))?;

    create_dir(&args.out_dir)?;
    let file = |name: &str| args.out_dir.join(name);
    at(&file("gt.csv"), trajio::write_trajectory(&gt, file("gt.csv")))?;
    at(&file("slam.csv"), trajio::write_trajectory(&slam, file("slam.csv")))?;
    at(&file("candidates.csv"), trajio::write_anchor_candidates(&candidates, file("candidates.csv")))?;
    config::write_effective(&config, &args.out_dir)?;
    info!("wrote {} frames and {} candidates to {}", gt.len(), candidates.len(), args.out_dir.display());
    Ok(())
}

pub const PIPELINE_ANCHORS: &str = "anchors.csv";
pub const PIPELINE_REFINED: &str = "refined.csv";
pub const PIPELINE_CANONICAL: &str = "canonical.csv";
pub const PIPELINE_TRANSFORM: &str = "canonical_transform.json";
pub const PIPELINE_REPORT: &str = "report.json";

/// filter-anchors → refine → canonicalize → evaluate, each stage reading
/// the previous stage's file.
pub fn pipeline(args: &PipelineArgs, loaded: &LoadedConfig) -> Result<()> {
    let mut config = loaded.config;
    args.anchors.apply(&mut config.anchors);
    args.refine.apply(&mut config.refine);
    args.metrics.apply(&mut config.metrics);
    config.anchors.validate()?;
    validate_metrics(&config.metrics)?;

    let dir = &args.out_dir;
    create_dir(dir)?;
    config::write_effective(&config, dir)?;
    let anchors = dir.join(PIPELINE_ANCHORS);
    let refined = dir.join(PIPELINE_REFINED);
    filter(&args.candidates, &anchors, &config.anchors)?;
    refine(&anchors, &args.slam, &refined, &config.anchors, &config.refine)?;
    canonicalize_cmd(&CanonicalizeArgs {
        input: refined.clone(),
        out: dir.join(PIPELINE_CANONICAL),
        emit_transform: Some(dir.join(PIPELINE_TRANSFORM)),
        uncanonicalize_with: None,
    })?;
    let motions = args.pred_motion.as_deref().zip(args.gt_motion.as_deref());
    evaluate(&refined, &args.gt_traj, motions, &dir.join(PIPELINE_REPORT), &config.metrics)
}
