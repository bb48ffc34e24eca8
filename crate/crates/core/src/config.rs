//! Engine configuration file (TOML).
//!
//! ```toml
//! [camera]
//! fov_deg = 83.0
//! altitude_m = 100.0
//!
//! [video]
//! width = 1920
//! height = 1080
//!
//! [lanes]
//! center = [760.0, 340.0, 1160.0, 740.0]
//! ```
//!
//! Every section and key is optional; missing values take the defaults below.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{build_lane_regions, AnalyticsConfig, LaneRegions, SamplingConfig};
use crate::geometry::{
    compute_drawing_area, ground_width, pixel_scale, BBoxCorners, CameraGeometry, DrawingArea, ScaleModel,
    ViewSize,
};
use crate::tracker::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    /// Horizontal lens field of view in degrees.
    pub fov_deg: f64,
    pub altitude_m: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            fov_deg: 83.0,
            altitude_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeSection {
    pub width: u32,
    pub height: u32,
}

impl Default for SizeSection {
    fn default() -> Self {
        Self {
            width: 1920,
            height: 1080,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanesSection {
    /// Intersection rectangle `[x1, y1, x2, y2]` in video pixels.
    pub center: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub capacity: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { capacity: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub camera: CameraSection,
    /// Resolution of the incoming video stream; detections use these pixels.
    pub video: SizeSection,
    /// Display view the overlay is drawn into.
    pub view: SizeSection,
    pub tracker: TrackerConfig,
    pub sampling: SamplingConfig,
    pub analytics: AnalyticsConfig,
    pub lanes: LanesSection,
    pub pipeline: PipelineSection,
}

/// Everything derived from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub video: ViewSize,
    pub view: ViewSize,
    pub drawing_area: DrawingArea,
    pub camera: CameraGeometry,
    pub scale: ScaleModel,
    pub lanes: Option<LaneRegions>,
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Validates every section and derives the geometry. Tracking runs in
    /// video pixels, so meters per pixel come from the full video width.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let video = ViewSize::new(self.video.width, self.video.height).map_err(|e| invalid(&e))?;
        let view = ViewSize::new(self.view.width, self.view.height).map_err(|e| invalid(&e))?;
        let drawing_area = compute_drawing_area(video, view).map_err(|e| invalid(&e))?;
        let camera = CameraGeometry::new(self.camera.altitude_m, self.camera.fov_deg).map_err(|e| invalid(&e))?;
        let scale = pixel_scale(ground_width(&camera), &DrawingArea::full(video));
        self.tracker.validate().map_err(|e| invalid(&e))?;
        SamplingConfig::new(self.sampling.time_ratio).map_err(|e| invalid(&e))?;
        if !(self.analytics.lane_change_threshold_m >= 0.0 && self.analytics.stationary_eps_mps >= 0.0) {
            return Err(ConfigError::Invalid("analytics thresholds must be non-negative".into()));
        }
        if self.pipeline.capacity == 0 {
            return Err(ConfigError::Invalid("pipeline capacity must be >= 1".into()));
        }
        let lanes = match self.lanes.center {
            None => None,
            Some([x1, y1, x2, y2]) => {
                let c = BBoxCorners::new(x1, y1, x2, y2).map_err(|e| invalid(&e))?;
                Some(build_lane_regions(c, video).map_err(|e| invalid(&e))?)
            }
        };
        Ok(Resolved {
            video,
            view,
            drawing_area,
            camera,
            scale,
            lanes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(c, EngineConfig::default());
        let r = c.resolve().unwrap();
        assert_eq!(r.drawing_area, DrawingArea::full(r.video));
        assert!(r.lanes.is_none());
        assert!((r.scale.meters_per_pixel * 1920.0 - r.scale.ground_width_m).abs() < 1e-9);
    }

    #[test]
    fn full_file() {
        let text = r#"
            [camera]
            fov_deg = 90.0
            altitude_m = 50.0
            [video]
            width = 1920
            height = 1080
            [view]
            width = 1920
            height = 1272
            [tracker]
            iou_threshold = 0.25
            max_age = 5
            min_hits = 3
            [sampling]
            time_ratio = 0.5
            [analytics]
            lane_change_threshold_m = 2.5
            stationary_eps_mps = 0.1
            lateral_sign_only = true
            [lanes]
            center = [760.0, 340.0, 1160.0, 740.0]
            [pipeline]
            capacity = 4
        "#;
        let c = EngineConfig::from_toml_str(text).unwrap();
        assert_eq!(c.tracker.max_age, 5);
        assert!(c.analytics.lateral_sign_only);
        let r = c.resolve().unwrap();
        assert_eq!((r.drawing_area.origin_dx, r.drawing_area.origin_dy), (0, 96));
        assert!((r.scale.ground_width_m - 100.0).abs() < 1e-9);
        assert_eq!(r.lanes.unwrap().areas.len(), 8);
    }

    #[test]
    fn rejects_unknown_and_mistyped_keys() {
        assert!(matches!(
            EngineConfig::from_toml_str("[camera]\nfov = 80.0\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(EngineConfig::from_toml_str("[tracker]\nmax_age = \"three\"\n").is_err());
        assert!(EngineConfig::from_toml_str("[radar]\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        for text in [
            "[camera]\naltitude_m = 0.0\n",
            "[tracker]\niou_threshold = 1.5\n",
            "[sampling]\ntime_ratio = 0.0\n",
            "[pipeline]\ncapacity = 0\n",
            "[lanes]\ncenter = [0.0, 10.0, 50.0, 50.0]\n",
        ] {
            let c = EngineConfig::from_toml_str(text).unwrap();
            assert!(matches!(c.resolve(), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = EngineConfig::load(Path::new("/nonexistent/engine.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/engine.toml"));
    }
}
