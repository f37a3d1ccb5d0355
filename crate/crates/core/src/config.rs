//! Scenario and pipeline configuration.
//!
//! The JSON form mirrors the field names below. Initial speeds are given in
//! km/h (as in the experiment tables); every other speed is in m/s.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which consecutive pairs of a pass order receive the safety-gap constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    AllConsecutive,
    ConflictingOnly,
}

/// Reference instants used for post-encroachment time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetMode {
    /// First vehicle's rear clearing the point to the second vehicle's front.
    #[default]
    RearToFront,
    FrontToFront,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    /// Motif name from the catalog (`Ms`, `Md`, `M1`..`M13`).
    pub motif: String,
    pub k_max: usize,
    /// Components whose best silhouette is below this stay whole.
    pub s_min: f64,
    pub row_normalize: bool,
    pub car_following_augmentation: bool,
    /// Following relations closer than this (m) are tied together.
    pub following_gap: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            motif: "Ms".to_string(),
            k_max: 6,
            s_min: 0.25,
            row_normalize: false,
            car_following_augmentation: true,
            following_gap: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_vehicles: usize,
    pub seed: u64,
    /// Initial distance to the stop line, metres.
    pub d0_range: [f64; 2],
    /// Initial speed, km/h.
    pub v0_range: [f64; 2],
    pub vehicle_length: f64,
    pub detect_range_ivd: f64,
    pub dt: f64,
    pub replan_period: f64,
    pub dt_safe: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub max_renegotiations: u32,
    pub t_limit: f64,
    pub lanes_per_direction: u32,
    pub lane_width: f64,
    /// Extra set-back of the stop line beyond the lanes (corner radius).
    pub corner_margin: f64,
    pub approach_length: f64,
    pub exit_length: f64,
    pub min_same_lane_gap: f64,
    /// Delayed vehicles wait rather than cross slower than this, m/s.
    pub min_crossing_speed: f64,
    pub constraint_mode: ConstraintMode,
    pub pet_mode: PetMode,
    pub grouping: GroupingConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_vehicles: 8,
            seed: 0,
            d0_range: [40.0, 80.0],
            v0_range: [30.0, 31.0],
            vehicle_length: 5.0,
            detect_range_ivd: 80.0,
            dt: 0.1,
            replan_period: 1.0,
            dt_safe: 1.5,
            a_min: -4.5,
            a_max: 2.5,
            v_max: 10.0,
            max_renegotiations: 20,
            t_limit: 60.0,
            lanes_per_direction: 1,
            lane_width: 4.5,
            corner_margin: 5.0,
            approach_length: 100.0,
            exit_length: 40.0,
            min_same_lane_gap: 10.0,
            min_crossing_speed: 5.0,
            constraint_mode: ConstraintMode::AllConsecutive,
            pet_mode: PetMode::RearToFront,
            grouping: GroupingConfig::default(),
        }
    }
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Initial speed range converted to m/s.
    pub fn v0_range_mps(&self) -> [f64; 2] {
        [kmh_to_mps(self.v0_range[0]), kmh_to_mps(self.v0_range[1])]
    }

    /// Number of integration steps between two replanning ticks.
    pub fn replan_every_steps(&self) -> usize {
        ((self.replan_period / self.dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_vehicles == 0 {
            return bad("n_vehicles must be at least 1".into());
        }
        for (name, r) in [("d0_range", self.d0_range), ("v0_range", self.v0_range)] {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] || r[0] < 0.0 {
                return bad(format!("{name} must be an ordered non-negative pair, got {r:?}"));
            }
        }
        let positive = [
            ("vehicle_length", self.vehicle_length),
            ("detect_range_ivd", self.detect_range_ivd),
            ("dt", self.dt),
            ("replan_period", self.replan_period),
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("t_limit", self.t_limit),
            ("lane_width", self.lane_width),
            ("approach_length", self.approach_length),
            ("exit_length", self.exit_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.dt_safe >= 0.0) {
            return bad(format!("dt_safe must be non-negative, got {}", self.dt_safe));
        }
        if !(self.a_min < 0.0) {
            return bad(format!("a_min must be negative, got {}", self.a_min));
        }
        if !(self.min_crossing_speed >= 0.0) {
            return bad("min_crossing_speed must be non-negative".into());
        }
        if self.corner_margin < 0.0 {
            return bad("corner_margin must be non-negative".into());
        }
        if !(1..=2).contains(&self.lanes_per_direction) {
            return bad(format!(
                "lanes_per_direction must be 1 or 2, got {}",
                self.lanes_per_direction
            ));
        }
        if self.d0_range[1] >= self.approach_length {
            return bad("d0_range must fit inside approach_length".into());
        }
        if self.v0_range_mps()[1] > self.v_max {
            return bad("initial speeds exceed v_max".into());
        }
        if self.grouping.k_max < 2 {
            return bad("grouping.k_max must be at least 2".into());
        }
        Ok(())
    }
}
