//! Micro kinematics (speed, acceleration, heading, direction, lane changes)
//! and macro lane/direction statistics derived from track boxes.
//!
//! Headings live in a north-positive frame: image `dy` is negated once, so
//! 90° is screen-up.

mod analyzer;
mod fps;
mod lanes;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBoxCorners, ScaleModel};

pub use analyzer::{FrameAnalysis, TrafficAnalyzer};
pub use fps::{sampling_interval, FpsMeter};
pub use lanes::{build_lane_regions, macro_snapshot, Approach, Bound, LaneArea, LaneRegions, MacroSnapshot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("clock went backwards: end {end} < start {start}")]
    Clock { start: f64, end: f64 },
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("degenerate lane arm: {0}")]
    DegenerateArm(String),
    #[error("invalid analytics config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Sampling window length in seconds.
    pub time_ratio: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { time_ratio: 1.0 }
    }
}

impl SamplingConfig {
    pub fn new(time_ratio: f64) -> Result<Self, AnalyticsError> {
        if !(time_ratio.is_finite() && time_ratio > 0.0) {
            return Err(AnalyticsError::InvalidConfig(format!(
                "time_ratio must be positive, got {time_ratio}"
            )));
        }
        Ok(Self { time_ratio })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub lane_change_threshold_m: f64,
    pub stationary_eps_mps: f64,
    /// Use the bare gross-distance lane-change test, without the lateral
    /// component requirement.
    pub lateral_sign_only: bool,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            lane_change_threshold_m: 2.0,
            stationary_eps_mps: 0.2,
            lateral_sign_only: false,
        }
    }
}

/// Compass direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
    #[serde(rename = "STATIONARY")]
    Stationary,
}

impl Direction {
    pub const ALL: [Direction; 9] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
        Direction::Stationary,
    ];

    /// Counter-clockwise from east, matching the heading angle.
    const BY_ANGLE: [Direction; 8] = [
        Direction::E,
        Direction::NE,
        Direction::N,
        Direction::NW,
        Direction::W,
        Direction::SW,
        Direction::S,
        Direction::SE,
    ];

    /// Bin center in degrees, `None` for stationary.
    pub fn center_deg(&self) -> Option<f64> {
        Self::BY_ANGLE
            .iter()
            .position(|d| d == self)
            .map(|i| i as f64 * 45.0)
    }

    /// Unit vector in the north-positive frame.
    pub fn unit(&self) -> Option<(f64, f64)> {
        self.center_deg().map(|deg| {
            let r = deg.to_radians();
            (r.cos(), r.sin())
        })
    }

    pub fn is_cardinal(&self) -> bool {
        matches!(self, Direction::N | Direction::E | Direction::S | Direction::W)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::NE => "NE",
            Direction::E => "E",
            Direction::SE => "SE",
            Direction::S => "S",
            Direction::SW => "SW",
            Direction::W => "W",
            Direction::NW => "NW",
            Direction::Stationary => "STATIONARY",
        }
    }

    /// Rotates counter-clockwise by `steps` bins of 45°.
    pub fn rotate(&self, steps: i32) -> Direction {
        match Self::BY_ANGLE.iter().position(|d| d == self) {
            Some(i) => Self::BY_ANGLE[(i as i32 + steps).rem_euclid(8) as usize],
            None => *self,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown direction {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneChange {
    None,
    Left,
    Right,
    Turn,
}

impl LaneChange {
    pub fn as_str(&self) -> &'static str {
        match self {
            LaneChange::None => "none",
            LaneChange::Left => "left",
            LaneChange::Right => "right",
            LaneChange::Turn => "turn",
        }
    }
}

impl fmt::Display for LaneChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LaneChange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            LaneChange::None,
            LaneChange::Left,
            LaneChange::Right,
            LaneChange::Turn,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
        .ok_or_else(|| format!("unknown lane change {s:?}"))
    }
}

/// Kinematics of one track at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroRecord {
    pub track_id: u64,
    pub frame: u64,
    pub bbox: BBoxCorners,
    pub speed_mps: f64,
    /// Undefined until two full sampling windows of history exist.
    pub acceleration_mps2: Option<f64>,
    /// Undefined while stationary.
    pub heading_deg: Option<f64>,
    pub direction: Direction,
    pub lane_change: LaneChange,
}

/// Distance between box centers, in pixels.
pub fn pixel_step(prev: &BBoxCorners, cur: &BBoxCorners) -> f64 {
    let (px, py) = prev.center();
    let (cx, cy) = cur.center();
    (cx - px).hypot(cy - py)
}

/// Path length over the last `sfps` per-frame steps, in meters.
pub fn real_distance(steps: &[f64], sfps: u32, scale: &ScaleModel) -> Result<f64, AnalyticsError> {
    let n = sfps as usize;
    if steps.len() < n || n == 0 {
        return Err(AnalyticsError::NotReady(format!(
            "{} of {sfps} steps available",
            steps.len()
        )));
    }
    let px: f64 = steps[steps.len() - n..].iter().sum();
    Ok(scale.to_meters(px))
}

pub fn speed(real_distance_m: f64, cfg: &SamplingConfig) -> f64 {
    real_distance_m / cfg.time_ratio
}

pub fn acceleration(speed_now: f64, speed_prev_interval: f64, cfg: &SamplingConfig) -> f64 {
    (speed_now - speed_prev_interval) / cfg.time_ratio
}

/// Heading in degrees within `(-180, 180]`, from a north-positive
/// displacement. `None` for zero displacement.
pub fn heading(dx: f64, dy: f64) -> Option<f64> {
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let deg = dy.atan2(dx).to_degrees();
    Some(if deg <= -180.0 { 180.0 } else { deg })
}

/// Eight 45° bins centred on the compass points, half-open
/// `[c - 22.5, c + 22.5)`; anything slower than `stationary_eps` is stationary.
pub fn classify_direction(heading_deg: Option<f64>, speed_mps: f64, stationary_eps: f64) -> Direction {
    let Some(h) = heading_deg else {
        return Direction::Stationary;
    };
    if speed_mps < stationary_eps || !h.is_finite() {
        return Direction::Stationary;
    }
    let bin = ((h + 22.5) / 45.0).floor() as i64;
    Direction::BY_ANGLE[bin.rem_euclid(8) as usize]
}

/// Lane-change / turn decision over one sampling window.
///
/// `p_start` and `p_end` are image-space centers (pixels, y down).
pub fn detect_lane_change(
    p_start: (f64, f64),
    p_end: (f64, f64),
    dir_start: Direction,
    dir_end: Direction,
    cfg: &AnalyticsConfig,
    scale: &ScaleModel,
) -> LaneChange {
    let east = scale.to_meters(p_end.0 - p_start.0);
    let north = -scale.to_meters(p_end.1 - p_start.1);
    let distance = east.hypot(north);
    if distance <= cfg.lane_change_threshold_m {
        return LaneChange::None;
    }
    let Some((ux, uy)) = dir_start.unit() else {
        return LaneChange::None;
    };
    if dir_end == Direction::Stationary {
        return LaneChange::None;
    }
    if dir_start != dir_end && dir_start.is_cardinal() && dir_end.is_cardinal() {
        return LaneChange::Turn;
    }
    // component along the left-hand normal of the travel direction
    let lateral = -east * uy + north * ux;
    if !cfg.lateral_sign_only && lateral.abs() <= 0.5 * cfg.lane_change_threshold_m {
        return LaneChange::None;
    }
    if lateral > 0.0 {
        LaneChange::Left
    } else if lateral < 0.0 {
        LaneChange::Right
    } else {
        LaneChange::None
    }
}
