//! One TOML file configures every subcommand; flags override it.

use std::path::Path;

use anchortraj::anchors::AnchorFilterConfig;
use anchortraj::driftsim::{AnchorNoiseConfig, DriftConfig, ScenarioConfig, TrajectoryStyle};
use anchortraj::metrics::EvalConfig;
use anchortraj::refine::RefineConfig;
use anchortraj::synthdb::GridSamplerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub frames: usize,
    pub fps: f64,
    pub style: TrajectoryStyle,
    /// Mean ground-truth speed, m/s.
    pub gt_speed: f64,
    /// Scale drift per frame.
    pub drift: f64,
    pub slam_rot_noise: f64,
    pub slam_trans_noise: f64,
    pub anchor_period: usize,
    pub anchor_trans_sigma: f64,
    pub anchor_rot_sigma_deg: f64,
    pub outlier_frac: f64,
    pub outlier_trans_range: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self {
            seed: None,
            frames: s.n_frames,
            fps: s.fps,
            style: s.style,
            gt_speed: s.gt_speed,
            drift: s.drift.scale_drift_per_frame,
            slam_rot_noise: s.drift.rot_noise_sigma,
            slam_trans_noise: s.drift.trans_noise_sigma,
            anchor_period: s.anchor_noise.anchor_period,
            anchor_trans_sigma: s.anchor_noise.pose_trans_sigma,
            anchor_rot_sigma_deg: s.anchor_noise.pose_rot_sigma.to_degrees(),
            outlier_frac: s.anchor_noise.outlier_fraction,
            outlier_trans_range: s.anchor_noise.outlier_trans_range,
        }
    }
}

impl SimulateConfig {
    pub fn drift_config(&self, rng_seed: u64) -> DriftConfig {
        DriftConfig {
            scale_drift_per_frame: self.drift,
            rot_noise_sigma: self.slam_rot_noise,
            trans_noise_sigma: self.slam_trans_noise,
            rng_seed,
        }
    }

    pub fn anchor_noise_config(&self, rng_seed: u64) -> AnchorNoiseConfig {
        AnchorNoiseConfig {
            pose_trans_sigma: self.anchor_trans_sigma,
            pose_rot_sigma: self.anchor_rot_sigma_deg.to_radians(),
            anchor_period: self.anchor_period,
            outlier_fraction: self.outlier_frac,
            outlier_trans_range: self.outlier_trans_range,
            rng_seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub anchors: AnchorFilterConfig,
    pub refine: RefineConfig,
    pub sampler: GridSamplerConfig,
    pub metrics: EvalConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Whether the file set `sampler.rng_seed` explicitly.
    pub sampler_seed_set: bool,
}

pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else {
        return Ok(LoadedConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let config: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).expect("parsed above");
    let sampler_seed_set = table
        .get("sampler")
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key("rng_seed"));
    Ok(LoadedConfig { config, sampler_seed_set })
}

pub fn to_toml(config: &PipelineConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

pub fn write_effective(config: &PipelineConfig, dir: &Path) -> Result<(), CliError> {
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    std::fs::write(&path, to_toml(config))
        .map_err(|e| CliError::domain("io", format!("cannot write {}: {e}", path.display()), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.simulate.seed = Some(7);
        c.anchors.min_inlier_count = 42;
        let back: PipelineConfig = toml::from_str(&to_toml(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[anchors]\nmin_inlier_cnt = 3\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[nonsense]\n").is_err());
        let ok: PipelineConfig = toml::from_str("[refine]\nscale_mode = \"ratio\"\n").unwrap();
        assert_eq!(ok.anchors, AnchorFilterConfig::default());
    }
}
