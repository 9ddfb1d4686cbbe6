//! Selection of reliable anchor frames from raw localization candidates.
//!
//! A candidate qualifies when both its PnP inlier count and inlier ratio reach
//! the configured minimums (boundary values are accepted). Qualifying
//! candidates then compete for spacing in a single left-to-right pass: when a
//! candidate lies closer than `min_interval_frames` to the last accepted one,
//! the one with the higher inlier count is kept, and ties keep the earlier
//! frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajio::AnchorCandidate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("candidates are not sorted by frame index (frame {current} follows {previous})")]
    Unsorted { previous: u64, current: u64 },
    #[error("invalid anchor filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorFilterConfig {
    pub min_inlier_count: u64,
    pub min_inlier_ratio: f64,
    pub min_interval_frames: u64,
}

impl Default for AnchorFilterConfig {
    fn default() -> Self {
        Self { min_inlier_count: 500, min_inlier_ratio: 0.5, min_interval_frames: 20 }
    }
}

impl AnchorFilterConfig {
    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.min_interval_frames < 1 {
            return Err(AnchorError::InvalidConfig("min_interval_frames must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return Err(AnchorError::InvalidConfig(format!(
                "min_inlier_ratio {} outside [0, 1]",
                self.min_inlier_ratio
            )));
        }
        Ok(())
    }

    pub fn qualifies(&self, c: &AnchorCandidate) -> bool {
        c.inlier_count >= self.min_inlier_count && c.inlier_ratio >= self.min_inlier_ratio
    }
}

/// Accepted anchors: strictly increasing frames, spaced at least
/// `min_interval_frames` apart, each passing both inlier thresholds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSet {
    anchors: Vec<AnchorCandidate>,
}

impl AnchorSet {
    pub fn anchors(&self) -> &[AnchorCandidate] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn frame_indices(&self) -> Vec<u64> {
        self.anchors.iter().map(|a| a.frame_index).collect()
    }

    pub fn into_inner(self) -> Vec<AnchorCandidate> {
        self.anchors
    }

    /// Wraps anchors that are already known to be strictly increasing,
    /// skipping the threshold checks. Used for pseudo-anchors and tests.
    pub fn from_sorted(anchors: Vec<AnchorCandidate>) -> Result<Self, AnchorError> {
        check_sorted(&anchors)?;
        Ok(Self { anchors })
    }
}

fn check_sorted(candidates: &[AnchorCandidate]) -> Result<(), AnchorError> {
    match candidates.windows(2).find(|w| w[1].frame_index <= w[0].frame_index) {
        Some(w) => Err(AnchorError::Unsorted { previous: w[0].frame_index, current: w[1].frame_index }),
        None => Ok(()),
    }
}

pub fn filter_anchors(
    candidates: &[AnchorCandidate],
    config: &AnchorFilterConfig,
) -> Result<AnchorSet, AnchorError> {
    config.validate()?;
    check_sorted(candidates)?;
    let mut accepted: Vec<AnchorCandidate> = Vec::new();
    for c in candidates.iter().filter(|c| config.qualifies(c)) {
        match accepted.last_mut() {
            Some(last) if c.frame_index - last.frame_index < config.min_interval_frames => {
                if c.inlier_count > last.inlier_count {
                    *last = *c;
                }
            }
            _ => accepted.push(*c),
        }
    }
    Ok(AnchorSet { anchors: accepted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub anchor_count: usize,
    /// Largest frame distance between consecutive anchors; 0 with fewer than two.
    pub largest_gap: u64,
    /// Frames before the first anchor (all frames when there are no anchors).
    pub head_span: u64,
    /// Frames after the last anchor.
    pub tail_span: u64,
}

pub fn anchor_coverage_report(anchors: &AnchorSet, total_frames: u64) -> CoverageReport {
    let idx = anchors.frame_indices();
    let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
        return CoverageReport { anchor_count: 0, largest_gap: 0, head_span: total_frames, tail_span: 0 };
    };
    CoverageReport {
        anchor_count: idx.len(),
        largest_gap: idx.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0),
        head_span: first.min(total_frames),
        tail_span: total_frames.saturating_sub(last + 1),
    }
}
