//! Flat `key = value` run configuration.
//!
//! ```text
//! # detector
//! epsilon = 10
//! N = 10
//! score_kind = SAD_A
//! # grid: cells are 32·w wide and 2^(l-1)·h tall
//! l = 1
//! w = 1
//! h = 32
//! n = 1
//! # session
//! target_count = 100
//! redetect_ratio = 0.3
//! param_mode = FULL
//! max_iterations = 30
//! convergence_epsilon = 0.01
//! track_levels = 3
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use featrack::{FastParams, FrontendConfig, GridConfig, ParamMode, ScoreKind, TrackerConfig};
use serde::Serialize;

use crate::InputError;

/// Every tunable of a run, before validation by the library types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub epsilon: u8,
    pub arc_length: u8,
    #[serde(serialize_with = "as_display")]
    pub score_kind: ScoreKind,
    pub levels: usize,
    pub cell_width_units: usize,
    pub cell_height_units: usize,
    pub nms_radius: usize,
    pub target_count: usize,
    pub redetect_ratio: f64,
    #[serde(serialize_with = "as_display")]
    pub param_mode: ParamMode,
    pub max_iterations: usize,
    pub convergence_epsilon: f64,
    pub track_levels: usize,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl Default for RunConfig {
    fn default() -> Self {
        let tracker = TrackerConfig::default();
        Self {
            epsilon: 10,
            arc_length: 10,
            score_kind: ScoreKind::SadA,
            levels: 1,
            cell_width_units: 1,
            cell_height_units: 32,
            nms_radius: 1,
            target_count: 100,
            redetect_ratio: 0.3,
            param_mode: tracker.param_mode,
            max_iterations: tracker.max_iterations,
            convergence_epsilon: tracker.convergence_epsilon,
            track_levels: tracker.num_levels,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, InputError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| InputError::Config {
        line,
        message: format!("{key}: {e}"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, InputError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(InputError::Config {
                    line,
                    message: format!("expected `key = value`, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "epsilon" | "eps" | "ε" => cfg.epsilon = parse_value(line, key, value)?,
                "N" | "arc_length" => cfg.arc_length = parse_value(line, key, value)?,
                "score_kind" | "score" => cfg.score_kind = parse_value(line, key, value)?,
                "l" | "levels" => cfg.levels = parse_value(line, key, value)?,
                "w" => cfg.cell_width_units = parse_value(line, key, value)?,
                "h" => cfg.cell_height_units = parse_value(line, key, value)?,
                "n" | "nms_radius" => cfg.nms_radius = parse_value(line, key, value)?,
                "target_count" => cfg.target_count = parse_value(line, key, value)?,
                "redetect_ratio" => cfg.redetect_ratio = parse_value(line, key, value)?,
                "param_mode" => cfg.param_mode = parse_value(line, key, value)?,
                "max_iterations" => cfg.max_iterations = parse_value(line, key, value)?,
                "convergence_epsilon" => cfg.convergence_epsilon = parse_value(line, key, value)?,
                "track_levels" => cfg.track_levels = parse_value(line, key, value)?,
                _ => {
                    return Err(InputError::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.frontend()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn fast(&self) -> Result<FastParams, InputError> {
        FastParams::new(self.epsilon, self.arc_length, self.score_kind).map_err(|e| InputError::Invalid(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridConfig, InputError> {
        GridConfig::new(self.cell_width_units, self.cell_height_units, self.levels, self.nms_radius)
            .map_err(|e| InputError::Invalid(e.to_string()))
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            param_mode: self.param_mode,
            max_iterations: self.max_iterations,
            convergence_epsilon: self.convergence_epsilon,
            num_levels: self.track_levels,
            ..TrackerConfig::default()
        }
    }

    pub fn frontend(&self) -> Result<FrontendConfig, InputError> {
        let tracker = self.tracker();
        tracker.validate().map_err(|e| InputError::Invalid(e.to_string()))?;
        if !(self.redetect_ratio > 0.0 && self.redetect_ratio < 1.0) {
            return Err(InputError::Invalid(format!(
                "redetect_ratio must be in (0, 1), got {}",
                self.redetect_ratio
            )));
        }
        if self.target_count == 0 {
            return Err(InputError::Invalid("target_count must be positive".into()));
        }
        Ok(FrontendConfig {
            target_count: self.target_count,
            redetect_ratio: self.redetect_ratio,
            fast: self.fast()?,
            grid: self.grid()?,
            tracker,
        })
    }
}
