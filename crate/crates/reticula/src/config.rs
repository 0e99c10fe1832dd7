//! One JSON file for every tunable in the pipeline.
//!
//! The numbers here are the knobs the underlying method leaves open:
//! filter sigmas, darkness thresholds, size bounds, match tolerances. A
//! [`PipelineConfig`] mirrors the file; [`PipelineConfig::params`] resolves
//! omitted values to the shipped defaults and converts each section into
//! the validated parameter types the stages actually take, so a config
//! that parses and resolves cannot later fail a range check mid-run.
//!
//! Every key is optional. Unknown keys are rejected, and both parse and
//! range errors name the offending path (for example
//! `track.rescue_threshold_delta`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::GrowParams;
use crate::eval::MatchCriterion;
use crate::filters::BilateralParams;
use crate::track::TrackParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
    #[error("invalid config value at {path}: {reason}")]
    Invalid { path: String, reason: String },
}

/// Raw, possibly partial configuration as written in the file. Missing
/// values fall back to the defaults documented on each field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub bilateral: BilateralSection,
    pub grow_bilateral: GrowSection,
    pub grow_laplacian: GrowSection,
    pub track: TrackSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilateralSection {
    /// Spatial sigma in pixels. Default 2.0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_s: Option<f64>,
    /// Range sigma in intensity levels. Default 25.0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_r: Option<f64>,
    /// Window radius in pixels. Default ceil(3 * sigma_s).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
}

/// Shared shape for both growing passes; the two passes resolve to
/// different darkness thresholds (the sharpened volume deepens dark
/// centers, so its pass can afford a stricter cut).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowSection {
    /// Seed/growth threshold: pixels strictly below it count as dark.
    /// Defaults: 90 on the bilateral volume, 80 on the sharpened one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dark_threshold: Option<u8>,
    /// Largest accepted bounding-box side in pixels. Default 10.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_diameter: Option<usize>,
    /// Smallest accepted pixel count. Default 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_area: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    /// Cross-slice centroid match radius in pixels. Default 3.0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xy_tolerance: Option<f64>,
    /// Added to the bilateral dark threshold for rescue growth. Default 20.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescue_threshold_delta: Option<u8>,
    /// Diameter bound for rescue growth. Default grow_bilateral.max_diameter + 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescue_max_diameter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    CentroidDistance,
    PixelOverlap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Match criterion. Default centroid_distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    /// Centroid match radius in pixels (centroid_distance mode). Default 5.0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid_tol: Option<f64>,
    /// Minimum intersection-over-union (pixel_overlap mode). Default 0.5.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_iou: Option<f64>,
}

/// Fully resolved, range-checked parameters for every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub bilateral: BilateralParams,
    pub grow_bilateral: GrowParams,
    pub grow_laplacian: GrowParams,
    pub track: TrackParams,
    pub eval: MatchCriterion,
}

impl PipelineConfig {
    /// Parses and fully validates a config file, so any later
    /// [`params`](Self::params) call on the result is infallible in
    /// practice.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut deserializer = serde_json::Deserializer::from_str(&text);
        let config: PipelineConfig =
            serde_path_to_error::deserialize(&mut deserializer).map_err(|source| {
                ConfigError::Json {
                    path: path.to_path_buf(),
                    source,
                }
            })?;
        config.params()?;
        Ok(config)
    }

    /// Resolves defaults and converts every section into its validated
    /// parameter type. Errors name the config path of the bad value.
    pub fn params(&self) -> Result<PipelineParams, ConfigError> {
        let section = |path: &str| {
            let path = path.to_string();
            move |e: Box<dyn std::error::Error>| ConfigError::Invalid {
                path,
                reason: e.to_string(),
            }
        };

        let b = &self.bilateral;
        let sigma_s = b.sigma_s.unwrap_or(2.0);
        let sigma_r = b.sigma_r.unwrap_or(25.0);
        let bilateral = match b.radius {
            Some(radius) => BilateralParams::new(sigma_s, sigma_r, radius),
            None => BilateralParams::with_default_radius(sigma_s, sigma_r),
        }
        .map_err(|e| section("bilateral")(e.into()))?;

        let g = &self.grow_bilateral;
        let grow_bilateral = GrowParams::new(
            g.dark_threshold.unwrap_or(90),
            g.max_diameter.unwrap_or(10),
            g.min_area.unwrap_or(2),
        )
        .map_err(|e| section("grow_bilateral")(e.into()))?;

        let g = &self.grow_laplacian;
        let grow_laplacian = GrowParams::new(
            g.dark_threshold.unwrap_or(80),
            g.max_diameter.unwrap_or(10),
            g.min_area.unwrap_or(2),
        )
        .map_err(|e| section("grow_laplacian")(e.into()))?;

        let t = &self.track;
        let rescue_max_diameter = t
            .rescue_max_diameter
            .unwrap_or(grow_bilateral.max_diameter() + 2);
        if rescue_max_diameter < grow_bilateral.max_diameter() {
            // Rescue growth runs with a *relaxed* threshold; bounding it
            // tighter than the strict pass could never recover anything
            // the strict pass found, so this is always a mistake.
            return Err(ConfigError::Invalid {
                path: "track.rescue_max_diameter".into(),
                reason: format!(
                    "{rescue_max_diameter} is smaller than grow_bilateral.max_diameter {}",
                    grow_bilateral.max_diameter()
                ),
            });
        }
        let track = TrackParams::new(
            t.xy_tolerance.unwrap_or(3.0),
            t.rescue_threshold_delta.unwrap_or(20),
            rescue_max_diameter,
        )
        .map_err(|e| section("track")(e.into()))?;

        let e = &self.eval;
        let eval = match e.mode.unwrap_or(EvalMode::CentroidDistance) {
            EvalMode::CentroidDistance => {
                MatchCriterion::centroid_distance(e.centroid_tol.unwrap_or(5.0))
                    .map_err(|err| section("eval.centroid_tol")(err.into()))?
            }
            EvalMode::PixelOverlap => MatchCriterion::pixel_overlap(e.min_iou.unwrap_or(0.5))
                .map_err(|err| section("eval.min_iou")(err.into()))?,
        };

        Ok(PipelineParams {
            bilateral,
            grow_bilateral,
            grow_laplacian,
            track,
            eval,
        })
    }
}
