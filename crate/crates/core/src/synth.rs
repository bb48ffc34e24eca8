//! Synthetic scenarios: ground-truth vehicle trajectories on a flat ground
//! plane and the noisy detection stream a detector would produce from them.
//!
//! Ground coordinates are meters with the origin at the top-left corner of
//! the camera footprint, x to the right and y down, so that dividing by
//! meters-per-pixel gives video pixels directly. Vehicles follow
//! piecewise-linear paths; their boxes are the axis-aligned bounds of a
//! `length × width` rectangle turned along the current segment.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{classify_direction, heading, LaneChange};
use crate::config::{CameraSection, SizeSection};
use crate::geometry::{ground_width, pixel_scale, BBoxCorners, BBoxXywh, CameraGeometry, DrawingArea, ScaleModel, ViewSize};
use crate::io::{Detection, DetectionFrame, TruthRow};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of the box-center jitter in pixels.
    pub sigma_px: f64,
    pub miss_prob: f64,
    /// Mean number of false positives per frame.
    pub fp_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_px: 0.0,
            miss_prob: 0.0,
            fp_rate: 0.0,
            seed: 7,
        }
    }
}

/// Ground-truth maneuver label over a time span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEvent {
    pub kind: LaneChange,
    pub from_s: f64,
    pub to_s: f64,
}

fn default_length() -> f64 {
    4.5
}

fn default_width() -> f64 {
    1.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: u64,
    /// Path in ground meters.
    pub waypoints: Vec<[f64; 2]>,
    pub speed_mps: f64,
    /// Constant acceleration applied from `start_s`; speed never drops below 0.
    #[serde(default)]
    pub accel_mps2: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "default_length")]
    pub length_m: f64,
    #[serde(default = "default_width")]
    pub width_m: f64,
    /// `[from_s, to_s)` spans during which the vehicle is hidden.
    #[serde(default)]
    pub occlusions: Vec<[f64; 2]>,
    #[serde(default)]
    pub events: Vec<TruthEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    pub fps: f64,
    #[serde(default)]
    pub video: SizeSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
}

/// Ground truth plus detections for a whole scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub truth: Vec<TruthRow>,
    pub detections: Vec<DetectionFrame>,
}

struct Path {
    points: Vec<(f64, f64)>,
    /// Cumulative length at each point.
    cum: Vec<f64>,
}

impl Path {
    fn new(points: &[[f64; 2]]) -> Self {
        let points: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cum.push(cum.last().copied().unwrap_or(0.0) + d);
        }
        Self { points, cum }
    }

    fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    /// Position and unit direction after travelling `s` meters.
    fn at(&self, s: f64) -> ((f64, f64), (f64, f64)) {
        let seg = (1..self.cum.len())
            .find(|&i| s < self.cum[i])
            .unwrap_or(self.cum.len() - 1);
        let (a, b) = (self.points[seg - 1], self.points[seg]);
        let len = self.cum[seg] - self.cum[seg - 1];
        let u = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        let f = s - self.cum[seg - 1];
        ((a.0 + u.0 * f, a.1 + u.1 * f), u)
    }
}

/// Distance travelled and current speed, `tau` seconds after start.
fn travel(v0: f64, a: f64, tau: f64) -> (f64, f64) {
    if a < 0.0 && tau > v0 / -a {
        (v0 * v0 / (2.0 * -a), 0.0)
    } else {
        (v0 * tau + 0.5 * a * tau * tau, v0 + a * tau)
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn video_size(&self) -> Result<ViewSize, SynthError> {
        ViewSize::new(self.video.width, self.video.height).map_err(|e| SynthError::Invalid(e.to_string()))
    }

    /// Meters per video pixel, the same model the engine uses.
    pub fn scale(&self) -> Result<ScaleModel, SynthError> {
        let cam = CameraGeometry::new(self.camera.altitude_m, self.camera.fov_deg)
            .map_err(|e| SynthError::Invalid(e.to_string()))?;
        Ok(pixel_scale(ground_width(&cam), &DrawingArea::full(self.video_size()?)))
    }

    /// Ground footprint `(width, height)` in meters.
    pub fn footprint(&self) -> Result<(f64, f64), SynthError> {
        let scale = self.scale()?;
        Ok((
            scale.to_meters(f64::from(self.video.width)),
            scale.to_meters(f64::from(self.video.height)),
        ))
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps).round() as u64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad(format!("duration must be non-negative, got {}", self.duration_s));
        }
        let n = &self.noise;
        if !(n.sigma_px.is_finite() && n.sigma_px >= 0.0) {
            return bad(format!("sigma_px must be non-negative, got {}", n.sigma_px));
        }
        if !(0.0..=1.0).contains(&n.miss_prob) {
            return bad(format!("miss_prob must lie in [0, 1], got {}", n.miss_prob));
        }
        if !(n.fp_rate.is_finite() && n.fp_rate >= 0.0) {
            return bad(format!("fp_rate must be non-negative, got {}", n.fp_rate));
        }
        let (fw, fh) = self.footprint()?;
        let mut ids = BTreeSet::new();
        for v in &self.vehicles {
            if !ids.insert(v.id) {
                return bad(format!("duplicate vehicle id {}", v.id));
            }
            if v.waypoints.len() < 2 {
                return bad(format!("vehicle {} needs at least two waypoints", v.id));
            }
            for p in &v.waypoints {
                if !(p[0] >= 0.0 && p[0] <= fw && p[1] >= 0.0 && p[1] <= fh) {
                    return bad(format!(
                        "vehicle {} waypoint ({}, {}) outside the {fw:.3} x {fh:.3} m footprint",
                        v.id, p[0], p[1]
                    ));
                }
            }
            if v.waypoints.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("vehicle {} has repeated consecutive waypoints", v.id));
            }
            let finite = [v.speed_mps, v.accel_mps2, v.start_s].iter().all(|x| x.is_finite());
            if !finite || v.speed_mps < 0.0 || v.start_s < 0.0 {
                return bad(format!("vehicle {} has an invalid speed profile", v.id));
            }
            if !(v.length_m > 0.0 && v.width_m > 0.0) {
                return bad(format!("vehicle {} has a non-positive size", v.id));
            }
        }
        Ok(())
    }
}

/// Samples ground truth at the scenario frame rate and derives detections.
/// Fully determined by the scenario, including its seed.
pub fn generate(s: &Scenario) -> Result<Generated, SynthError> {
    s.validate()?;
    let scale = s.scale()?;
    let (img_w, img_h) = (f64::from(s.video.width), f64::from(s.video.height));
    let mut rng = ChaCha8Rng::seed_from_u64(s.noise.seed);
    let jitter = Normal::new(0.0, s.noise.sigma_px).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let fps_count = if s.noise.fp_rate > 0.0 {
        Some(Poisson::new(s.noise.fp_rate).map_err(|e| SynthError::Invalid(e.to_string()))?)
    } else {
        None
    };
    let paths: Vec<Path> = s.vehicles.iter().map(|v| Path::new(&v.waypoints)).collect();

    let mut truth = Vec::new();
    let mut detections = Vec::new();
    for k in 0..s.frame_count() {
        let t = k as f64 / s.fps;
        let mut boxes = Vec::new();
        for (v, path) in s.vehicles.iter().zip(&paths) {
            if t < v.start_s {
                continue;
            }
            let (dist, speed) = travel(v.speed_mps, v.accel_mps2, t - v.start_s);
            if dist >= path.length() {
                continue;
            }
            let ((gx, gy), (ux, uy)) = path.at(dist);
            let bw = v.length_m * ux.abs() + v.width_m * uy.abs();
            let bh = v.length_m * uy.abs() + v.width_m * ux.abs();
            let (cx, cy) = (scale.to_pixels(gx), scale.to_pixels(gy));
            let (pw, ph) = (scale.to_pixels(bw), scale.to_pixels(bh));
            let bbox = BBoxCorners {
                x1: cx - pw / 2.0,
                y1: cy - ph / 2.0,
                x2: cx + pw / 2.0,
                y2: cy + ph / 2.0,
            };
            let hdg = if speed > 0.0 { heading(ux, -uy) } else { None };
            let accel = if speed > 0.0 || v.accel_mps2 > 0.0 { v.accel_mps2 } else { 0.0 };
            let direction = classify_direction(hdg, speed, 0.2);
            let lane_change = v
                .events
                .iter()
                .find(|e| t >= e.from_s && t < e.to_s)
                .map_or(LaneChange::None, |e| e.kind);
            let visible = !v.occlusions.iter().any(|o| t >= o[0] && t < o[1]);
            truth.push(TruthRow {
                frame: k,
                t,
                id: v.id,
                bbox,
                speed_mps: speed,
                acceleration_mps2: Some(accel),
                heading_deg: hdg,
                direction,
                lane_change,
                true_pos_m: (gx, gy),
                visible,
            });

            let missed = rng.random::<f64>() < s.noise.miss_prob;
            let (jx, jy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
            if visible && !missed {
                boxes.push(Detection {
                    bbox: BBoxXywh::pixels(bbox.x1 + jx, bbox.y1 + jy, pw, ph)
                        .map_err(|e| SynthError::Invalid(e.to_string()))?,
                    score: 0.9,
                    class: "car".into(),
                });
            }
        }
        if let Some(dist) = &fps_count {
            let n = dist.sample(&mut rng) as u64;
            for _ in 0..n {
                let (lw, lh) = (scale.to_pixels(4.5), scale.to_pixels(1.8));
                let (w, h) = if rng.random::<bool>() { (lw, lh) } else { (lh, lw) };
                let x = rng.random_range(0.0..(img_w - w).max(1.0));
                let y = rng.random_range(0.0..(img_h - h).max(1.0));
                boxes.push(Detection {
                    bbox: BBoxXywh::pixels(x, y, w, h).map_err(|e| SynthError::Invalid(e.to_string()))?,
                    score: rng.random_range(0.3..0.6),
                    class: "car".into(),
                });
            }
        }
        detections.push(DetectionFrame {
            frame: k,
            timestamp: t,
            boxes,
        });
    }
    Ok(Generated { truth, detections })
}

fn vehicle(id: u64, waypoints: &[[f64; 2]], speed_mps: f64) -> VehicleSpec {
    VehicleSpec {
        id,
        waypoints: waypoints.to_vec(),
        speed_mps,
        accel_mps2: 0.0,
        start_s: 0.0,
        length_m: default_length(),
        width_m: default_width(),
        occlusions: Vec::new(),
        events: Vec::new(),
    }
}

fn base(name: &str, duration_s: f64, vehicles: Vec<VehicleSpec>) -> Scenario {
    Scenario {
        name: name.into(),
        duration_s,
        fps: 30.0,
        video: SizeSection::default(),
        camera: CameraSection::default(),
        noise: NoiseModel::default(),
        vehicles,
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 13] = [
    "two-crossing-vehicles",
    "occlusion-gap",
    "lane-change-left",
    "left-turn",
    "load-27",
    "constant-velocity-n",
    "constant-velocity-ne",
    "constant-velocity-e",
    "constant-velocity-se",
    "constant-velocity-s",
    "constant-velocity-sw",
    "constant-velocity-w",
    "constant-velocity-nw",
];

/// All presets, in [`PRESET_NAMES`] order. The default camera (100 m, 83°)
/// over 1920×1080 video sees a footprint of about 176.9 × 99.5 m.
pub fn scenario_presets() -> Vec<Scenario> {
    PRESET_NAMES.iter().filter_map(|n| preset(n).ok()).collect()
}

pub fn preset(name: &str) -> Result<Scenario, SynthError> {
    let s = match name {
        "two-crossing-vehicles" => base(
            name,
            10.0,
            vec![
                vehicle(1, &[[20.0, 45.0], [160.0, 45.0]], 12.0),
                vehicle(2, &[[90.0, 5.0], [90.0, 95.0]], 9.0),
            ],
        ),
        "occlusion-gap" => {
            // hidden for exactly three frames at 30 fps
            let mut a = vehicle(1, &[[10.0, 47.0], [170.0, 47.0]], 10.0);
            a.occlusions.push([3.0 - 1e-6, 3.1 - 1e-6]);
            let b = vehicle(2, &[[170.0, 53.0], [10.0, 53.0]], 10.0);
            base(name, 8.0, vec![a, b])
        }
        "lane-change-left" => {
            // northbound, 35 m straight, 3.5 m shift to the west over 20 m, straight again
            let mut a = vehicle(1, &[[80.0, 95.0], [80.0, 60.0], [76.5, 40.0], [76.5, 5.0]], 10.0);
            let shift = 3.5f64.hypot(20.0) / 10.0;
            a.events.push(TruthEvent {
                kind: LaneChange::Left,
                from_s: 3.5,
                to_s: 3.5 + shift,
            });
            let mut b = vehicle(2, &[[84.0, 95.0], [84.0, 5.0]], 10.0);
            b.start_s = 1.0;
            let c = vehicle(3, &[[95.0, 5.0], [95.0, 95.0]], 10.0);
            base(name, 8.0, vec![a, b, c])
        }
        "left-turn" => {
            // southbound, then a 10 m radius left turn onto an eastbound road
            let (cx, cy, r) = (95.0, 40.0, 10.0);
            let mut pts = vec![[85.0, 5.0]];
            for i in 0..=8 {
                let phi = std::f64::consts::PI * (1.0 - f64::from(i) / 16.0);
                pts.push([cx + r * phi.cos(), cy + r * phi.sin()]);
            }
            pts.push([170.0, 50.0]);
            let mut a = vehicle(1, &pts, 8.0);
            let arc = r * std::f64::consts::FRAC_PI_2;
            a.events.push(TruthEvent {
                kind: LaneChange::Turn,
                from_s: 35.0 / 8.0,
                to_s: (35.0 + arc) / 8.0,
            });
            let mut b = vehicle(2, &[[81.0, 5.0], [81.0, 95.0]], 8.0);
            b.start_s = 3.0;
            base(name, 14.0, vec![a, b])
        }
        "load-27" => {
            let mut vs = Vec::new();
            for lane in 0..9u32 {
                let y = 10.0 + 10.0 * f64::from(lane);
                for j in 0..3u32 {
                    let id = u64::from(lane * 3 + j + 1);
                    let off = 50.0 * f64::from(j);
                    let wp = if lane % 2 == 0 {
                        [[5.0 + off, y], [170.0, y]]
                    } else {
                        [[170.0 - off, y], [5.0, y]]
                    };
                    vs.push(vehicle(id, &wp, 8.0));
                }
            }
            base(name, 5.0, vs)
        }
        other => {
            let Some(dir) = other.strip_prefix("constant-velocity-") else {
                return Err(SynthError::UnknownPreset(other.into()));
            };
            let (ux, uy): (f64, f64) = match dir {
                "n" => (0.0, -1.0),
                "ne" => (1.0, -1.0),
                "e" => (1.0, 0.0),
                "se" => (1.0, 1.0),
                "s" => (0.0, 1.0),
                "sw" => (-1.0, 1.0),
                "w" => (-1.0, 0.0),
                "nw" => (-1.0, -1.0),
                _ => return Err(SynthError::UnknownPreset(other.into())),
            };
            let norm = ux.hypot(uy);
            let (ux, uy) = (ux / norm, uy / norm);
            let (cx, cy, half) = (88.0, 50.0, 30.0);
            base(
                other,
                6.0,
                vec![vehicle(
                    1,
                    &[[cx - half * ux, cy - half * uy], [cx + half * ux, cy + half * uy]],
                    10.0,
                )],
            )
        }
    };
    Ok(s)
}

/// Number of maneuver events of `kind` in a track's truth rows, counted as
/// runs of consecutive frames carrying that label.
pub fn count_events(rows: &[TruthRow], id: u64, kind: LaneChange) -> usize {
    let mut count = 0;
    let mut inside = false;
    for r in rows.iter().filter(|r| r.id == id) {
        let hit = r.lane_change == kind;
        if hit && !inside {
            count += 1;
        }
        inside = hit;
    }
    count
}
